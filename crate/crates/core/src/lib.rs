pub mod data;
pub mod error;
pub mod eval;
pub mod explain;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, Result};
pub use tensor::{Rng, Tensor};
