//! Masked token transformer over [`TokenGrid`]s.
//!
//! Training masks a random fraction of cells and predicts them with
//! cross-entropy; inference starts from a (partly) masked grid and commits the
//! most confident predictions over a fixed number of steps. Guidance combines
//! an unconditioned pass with text- and audio-conditioned passes.

mod checkpoint;
mod decode;
mod gradcheck;
mod guidance;
mod model;
pub mod ops;
mod schedule;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, TokenGrid};
use crate::conditioning::CondEmbedding;

pub use checkpoint::{read_generator, write_generator, GENERATOR_FORMAT_VERSION, GENERATOR_MAGIC};
pub use decode::{iterative_decode, Conditions, DecodeOutcome};
pub use gradcheck::{gradient_check, GradientReport};
pub use guidance::{cfg_combine, CfgScale, Logits};
pub use model::Model;
pub use schedule::{MaskSchedule, ScheduleKind};
pub use train::{
    evaluate, plan_step, train_masked, CondChoice, EpochStats, StepPlan, TrainExample, TrainParams,
};

/// The production model runs in single precision.
pub type Generator = Model<f32>;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("logit sets cover different cells")]
    CellMismatch,
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint version {found}, this build reads {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("checkpoint was trained against codebook {expected}, got {found}")]
    CodebookMismatch { expected: String, found: String },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GeneratorError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub blocks: usize,
    pub dim: usize,
    pub heads: usize,
    /// Codebook size K. The vocabulary adds the mask and conditional-mask ids.
    pub codebook_size: usize,
    /// Grid rows (frequency patches).
    pub freq: usize,
    /// Grid columns (time patches).
    pub time: usize,
    pub cond_dim: usize,
    pub mlp_ratio: usize,
    pub decode_iters: usize,
    /// Softmax temperature for token sampling; 0 means argmax.
    pub temperature: f64,
    /// Scale of the Gumbel noise on commit confidences, annealed to 0.
    pub choice_temperature: f64,
    /// Feed conditioned passes the conditional-mask id instead of the plain
    /// mask id at masked cells. The condition projection is added either way.
    pub cond_mask_token: bool,
    pub seed: u64,
}

impl GeneratorConfig {
    /// Small model over the 16×60 grid.
    pub fn toy() -> Self {
        Self {
            blocks: 2,
            dim: 128,
            heads: 4,
            codebook_size: 256,
            freq: 16,
            time: 60,
            cond_dim: crate::conditioning::EMBED_DIM,
            mlp_ratio: 4,
            decode_iters: 16,
            temperature: 1.0,
            choice_temperature: 4.5,
            cond_mask_token: true,
            seed: 0,
        }
    }

    /// Full-size shape: 12 blocks, 768 wide, 12 heads. Only its shape is
    /// exercised; nothing trains it.
    pub fn full_scale() -> Self {
        Self {
            blocks: 12,
            dim: 768,
            heads: 12,
            codebook_size: 1024,
            cond_dim: 512,
            ..Self::toy()
        }
    }

    pub fn mask_id(&self) -> u32 {
        self.codebook_size as u32
    }

    pub fn cond_mask_id(&self) -> u32 {
        self.codebook_size as u32 + 1
    }

    pub fn vocab(&self) -> usize {
        self.codebook_size + 2
    }

    pub fn cells(&self) -> usize {
        self.freq * self.time
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn hidden(&self) -> usize {
        self.dim * self.mlp_ratio
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(GeneratorError::Config(m.to_string()));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return fail("dim must be a positive multiple of heads");
        }
        if self.decode_iters == 0 {
            return fail("decode_iters must be at least 1");
        }
        if self.codebook_size < 2 {
            return fail("codebook_size must be at least 2");
        }
        if self.freq == 0 || self.time == 0 {
            return fail("grid must be non-empty");
        }
        if self.cond_dim == 0 || self.mlp_ratio == 0 {
            return fail("cond_dim and mlp_ratio must be positive");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be finite and non-negative");
        }
        if !(self.choice_temperature >= 0.0 && self.choice_temperature.is_finite()) {
            return fail("choice_temperature must be finite and non-negative");
        }
        Ok(())
    }

    /// Trainable scalar count, without allocating the model.
    pub fn parameter_count(&self) -> usize {
        let d = self.dim;
        let h = self.hidden();
        let block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * h + h) + (h * d + d);
        self.vocab() * d
            + (self.freq + self.time) * d
            + self.cond_dim * d
            + d
            + self.cond_dim
            + self.blocks * block
            + 2 * d
            + d * self.codebook_size
            + self.codebook_size
    }

    pub(crate) fn check_grid(&self, grid: &TokenGrid) -> Result<()> {
        if grid.shape() != (self.freq, self.time) {
            return Err(GeneratorError::ShapeMismatch(format!(
                "grid is {}x{}, model expects {}x{}",
                grid.freq(),
                grid.time(),
                self.freq,
                self.time
            )));
        }
        grid.check_vocab(self.codebook_size)?;
        Ok(())
    }

    pub(crate) fn check_cond(&self, cond: &CondEmbedding) -> Result<()> {
        if cond.vector.len() != self.cond_dim {
            return Err(GeneratorError::ShapeMismatch(format!(
                "condition has {} dims, model expects {}",
                cond.vector.len(),
                self.cond_dim
            )));
        }
        Ok(())
    }
}
