//! Two-stage neural surface reconstruction and appearance baking.

pub mod appearance;
pub mod cli;
pub mod archive;
pub mod dataset;
pub mod diffmath;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod imaging;
pub mod math;
pub mod package;
pub mod raster;

pub use error::{Error, Result};
