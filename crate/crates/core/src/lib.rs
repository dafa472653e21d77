//! Facial expression recognition: a Viola-Jones face detector feeding a
//! from-scratch convolutional classifier over seven emotions.

pub mod cli;
pub mod data;
pub mod error;
pub mod haar;
pub mod nn;
pub mod store;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
