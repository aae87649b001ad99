//! Decouple-before-align prompt tuning on a miniature dual encoder.

pub mod autograd;
pub mod cli;
pub mod disentangle;
pub mod encoder;
mod error;
pub mod instrument;
pub mod losses;
pub mod scenedata;
pub mod trainer;

pub use error::{Error, Result};
