use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step decay: the rate is multiplied by `factor` every `step_epochs`
/// epochs and never drops below `floor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    pub step_epochs: usize,
    pub floor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 1e-3,
            factor: 0.5,
            step_epochs: 5,
            floor: 1e-6,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0)
            || !(self.floor > 0.0)
            || !(self.initial > 0.0)
            || self.step_epochs == 0
        {
            return Err(Error::Config(format!(
                "learning-rate schedule {self:?} needs initial > 0, factor in (0,1), \
                 floor > 0 and step_epochs ≥ 1"
            )));
        }
        Ok(())
    }

    /// Rate for the 0-based `epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.step_epochs).min(i32::MAX as usize) as i32;
        (self.initial * self.factor.powi(steps)).max(self.floor)
    }
}
