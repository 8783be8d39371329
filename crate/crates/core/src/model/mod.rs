//! Network construction from a declarative config, whole-model forward and
//! backward passes, and checkpoint persistence.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{Checkpoint, TensorRole};
pub use config::{check_v_shape, ActShape, LayerSpec, ModelConfig, ShapeTrace, NUM_CLASSES};
pub use network::{ForwardPass, Layer, Model};
