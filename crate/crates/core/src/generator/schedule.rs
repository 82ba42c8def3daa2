use serde::{Deserialize, Serialize};

use super::{GeneratorError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

/// Fraction of cells still masked after each decoding step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSchedule {
    pub kind: ScheduleKind,
    pub total_iters: usize,
}

impl MaskSchedule {
    pub fn cosine(total_iters: usize) -> Self {
        Self { kind: ScheduleKind::Cosine, total_iters }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 {
            return Err(GeneratorError::Schedule("total_iters must be at least 1".into()));
        }
        Ok(())
    }

    /// `ratio(0) = 1`, `ratio(total_iters) = 0`, strictly decreasing between.
    pub fn ratio(&self, step: usize) -> Result<f64> {
        self.validate()?;
        if step > self.total_iters {
            return Err(GeneratorError::Schedule(format!(
                "step {step} beyond {} iterations",
                self.total_iters
            )));
        }
        // cos(pi/2) is 6e-17 in floating point, which would leave one cell
        if step == self.total_iters {
            return Ok(0.0);
        }
        let x = step as f64 / self.total_iters as f64;
        Ok(match self.kind {
            ScheduleKind::Cosine => (std::f64::consts::FRAC_PI_2 * x).cos(),
            ScheduleKind::Linear => 1.0 - x,
        })
    }

    /// Cells still masked after `step` steps, starting from `initial`.
    pub fn masked_after(&self, step: usize, initial: usize) -> Result<usize> {
        let r = self.ratio(step)?;
        Ok(((r * initial as f64).ceil() as usize).min(initial))
    }
}
