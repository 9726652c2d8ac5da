//! Instance segmentation of 3D Gaussian splatting scenes.

pub mod config;
pub mod error;
pub mod eval;
pub mod cluster;
pub mod io;
pub mod language;
pub mod losses;
pub mod masks;
pub mod raster;
pub mod real;
pub mod scene;
pub mod spatial;
pub mod pipeline;
pub mod synth;
pub mod train;

pub use config::SceneConfig;
pub use error::{Error, Result};
pub use real::{Precision, Real};

#[cfg(test)]
mod test_util;
