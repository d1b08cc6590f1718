//! Deterministic raster kernels: boolean algebra, exact Euclidean distance
//! transform, morphology, geodesic distance and resampling.

mod edt;
mod geodesic;
mod mask;
mod morphology;
mod resize;

pub use edt::{argmax_pixel, distance_transform, max_of, squared_distance_to_sites};
pub use geodesic::{geodesic_distance, GeodesicField};
pub use mask::{mask_and, mask_not, mask_or};
pub use morphology::{dilate, erode};
pub use resize::{resize_bilinear, resize_nearest};
