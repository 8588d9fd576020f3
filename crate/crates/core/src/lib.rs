pub mod config;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod matching;
pub mod posegraph;
pub mod scenario;
pub mod tensor;

pub use error::{Error, Result};
