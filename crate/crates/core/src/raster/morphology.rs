//! Binary morphology with a Euclidean disk structuring element.

use super::edt::squared_distance_to_sites;
use super::mask::mask_not;
use crate::types::BinaryMask;

/// Pixels within Euclidean distance `radius` of a `true` pixel.
/// `dilate(m, 0.0) == m`; negative radii behave like zero.
pub fn dilate(m: &BinaryMask, radius: f64) -> BinaryMask {
    let r2 = radius.max(0.0).powi(2);
    squared_distance_to_sites(m, false).map(|&d2| (d2 as f64) <= r2)
}

/// Dual of [`dilate`]: `erode(m, r) = !dilate(!m, r)`. Pixels outside the
/// image do not erode the mask.
pub fn erode(m: &BinaryMask, radius: f64) -> BinaryMask {
    mask_not(&dilate(&mask_not(m), radius))
}
