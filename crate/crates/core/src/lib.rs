pub mod bregman;
pub mod error;
pub mod kernel;
pub mod metrics;
mod linalg;
pub mod pixelwise;
pub mod qp;
pub mod spatial;
pub mod synth;
pub mod scene;

pub use error::{Result, UnmixError};
