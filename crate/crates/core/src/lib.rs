pub mod cohort;
pub mod distortion;
pub mod error;
pub mod features;
pub mod mesh;
pub mod pipeline;
pub mod sampling;
pub mod spharm;
pub mod sphere_param;
pub mod svm;
pub mod template;

pub use error::{Error, Result};
