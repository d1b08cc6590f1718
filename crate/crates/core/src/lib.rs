//! Click-driven trimap prediction.
//!
//! A user (or a simulated user) clicks foreground, background or unknown
//! points; a predictor turns the image plus clicks into a three-class trimap;
//! a matting baseline turns the trimap into an alpha matte. The simulation
//! module decides where the next click goes, and the harness and training
//! modules evaluate and fit predictors with that simulator.

pub mod error;
pub mod harness;
pub mod io;
pub mod matting;
pub mod predictors;
pub mod raster;
pub mod simulation;
pub mod training;
pub mod types;

pub use error::{Error, Result};
