//! Audio/text emotion classification with model-level fusion and a
//! discriminator-scored InfoNCE regularizer.

mod binio;
pub mod data;
pub mod dsp;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod par;
pub mod selfcheck;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
