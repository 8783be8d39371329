//! Loss, optimizer, learning-rate schedule and the epoch loop.

mod loss;
mod optim;
mod schedule;
mod trainer;

pub use loss::{argmax_rows, cross_entropy, LOG_CLAMP};
pub use optim::{rmsprop_step, RmsProp, RmsPropParams};
pub use schedule::LrSchedule;
pub use trainer::{
    evaluate_loss, train_epochs, Dataset, InMemoryDataset, TrainConfig, TrainOutcome, TrainReport,
};

use serde::{Deserialize, Serialize};

/// Metrics for one completed epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub learning_rate: f64,
}
