//! Surface vision transformer toolkit.
//!
//! Signals sampled on an icosphere are cut into triangular patches, embedded
//! as a token sequence and fed through a pure transformer encoder that is
//! trained for scalar regression, optionally after masked-patch-prediction
//! pretraining. Attention matrices can be rolled out and painted back onto
//! the sphere.

pub mod attention;
pub mod autodiff;
pub mod error;
pub(crate) mod format;
pub mod geometry;
pub mod model;
pub mod data;
pub mod training;

pub use error::{Error, ErrorClass, Result};
