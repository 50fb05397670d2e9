//! Multilinear compressive learning with an adaptive compression rate.
//!
//! A signal tensor is compressed on the sensor with one matrix per mode,
//! any leading sub-block of the measurement can be transmitted, and the
//! server zero-pads it, lifts it back to the signal shape and classifies it.

pub mod data;
pub mod adam;
pub mod error;
pub mod flops;
pub mod linalg;
pub mod mask;
pub mod mcs;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use mask::{MaskDims, MaskSpec};
pub use tensor::{Matrix, Tensor};
