//! Continuous multi-channel generation by token-level outpainting.
//!
//! Each new segment copies the previous grid's last `overlap_columns` token
//! columns into its first columns and decodes the rest. Audio is emitted in
//! non-overlapping pieces, joined by a short crossfade because the vocoder's
//! phase does not carry over between independently vocoded segments.

mod run;
mod sink;

use serde::{Deserialize, Serialize};
use sha2::Digest;
use thiserror::Error;

use crate::codec::{vq_decode, Codebook, CodecError, TokenGrid, PATCH, PATCH_DIM};
use crate::conditioning::{embed_text_dim, CondEmbedding, ConditioningError, EMBED_DIM};
use crate::dsp::{DspError, StftConfig, Vocoder, Waveform};
use crate::generator::{iterative_decode, CfgScale, Conditions, Generator, GeneratorError, MaskSchedule};

pub use run::{
    run_stream, ChannelStats, Clock, Control, ControlCommand, StopWhen, StreamEvent, StreamObserver, StreamReport,
    StreamSetup, StreamStats, VirtualClock, WallClock,
};
pub use sink::{DigestSink, MemorySink, MonoDirSink, NullSink, Sink, WavSink};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("plan: {0}")]
    Plan(String),
    #[error("crossfade of {length} samples needs inputs at least that long ({tail} and {head})")]
    Crossfade { length: usize, tail: usize, head: usize },
    #[error("sink: {0}")]
    Sink(String),
    #[error("worker for channel {0} stopped unexpectedly")]
    Worker(usize),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Conditioning(#[from] ConditioningError),
}

pub type Result<T> = std::result::Result<T, StreamError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CrossfadeLaw {
    /// `tail + a·(head − tail)`; exact identity when both sides agree.
    #[default]
    Linear,
    /// `tail·cos θ + head·sin θ`; keeps the energy of uncorrelated inputs.
    EqualPower,
}

/// Segment geometry in token columns, plus the seam treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutpaintPlan {
    /// Token columns per segment (the grid's T).
    pub segment_columns: usize,
    /// Columns carried from the previous segment.
    pub overlap_columns: usize,
    pub crossfade_ms: f64,
    #[serde(default)]
    pub crossfade_law: CrossfadeLaw,
    /// Extra frames vocoded before the emitted span to settle phase.
    pub vocoder_margin_frames: usize,
}

impl Default for OutpaintPlan {
    /// 60 columns (10 s at 48 kHz / hop 500), half of them carried over.
    fn default() -> Self {
        Self {
            segment_columns: 60,
            overlap_columns: 30,
            crossfade_ms: 250.0,
            crossfade_law: CrossfadeLaw::Linear,
            vocoder_margin_frames: 8,
        }
    }
}

impl OutpaintPlan {
    pub fn validate(&self, stft: &StftConfig) -> Result<()> {
        if self.overlap_columns == 0 || self.overlap_columns >= self.segment_columns {
            return Err(StreamError::Plan(format!(
                "overlap {} must lie strictly between 0 and {}",
                self.overlap_columns, self.segment_columns
            )));
        }
        if !(self.crossfade_ms >= 0.0 && self.crossfade_ms.is_finite()) {
            return Err(StreamError::Plan("crossfade_ms must be finite and non-negative".into()));
        }
        let l = self.crossfade_samples(stft);
        if l > self.overlap_samples(stft) || l > self.new_samples(stft) {
            return Err(StreamError::Plan(format!("crossfade of {l} samples exceeds the overlap")));
        }
        Ok(())
    }

    pub fn segment_samples(&self, stft: &StftConfig) -> usize {
        self.segment_columns * PATCH * stft.hop_size
    }

    pub fn overlap_samples(&self, stft: &StftConfig) -> usize {
        self.overlap_columns * PATCH * stft.hop_size
    }

    /// Audio each segment after the first contributes.
    pub fn new_samples(&self, stft: &StftConfig) -> usize {
        self.segment_samples(stft) - self.overlap_samples(stft)
    }

    pub fn crossfade_samples(&self, stft: &StftConfig) -> usize {
        (self.crossfade_ms * stft.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn segment_seconds(&self, stft: &StftConfig) -> f64 {
        self.segment_samples(stft) as f64 / stft.sample_rate as f64
    }

    pub fn overlap_seconds(&self, stft: &StftConfig) -> f64 {
        self.overlap_samples(stft) as f64 / stft.sample_rate as f64
    }
}

/// Everything shared read-only by the channel workers.
pub struct Pipeline {
    pub generator: Generator,
    pub codebook: Codebook,
    pub stft: StftConfig,
    pub vocoder: Box<dyn Vocoder>,
    pub schedule: MaskSchedule,
}

impl Pipeline {
    pub fn new(
        generator: Generator,
        codebook: Codebook,
        stft: StftConfig,
        vocoder: Box<dyn Vocoder>,
        schedule: MaskSchedule,
    ) -> Result<Self> {
        stft.validate()?;
        schedule.validate()?;
        let g = generator.config();
        let fail = |m: String| Err(StreamError::Plan(m));
        if stft.mel_bins != g.freq * PATCH {
            return fail(format!("{} mel bins do not give {} token rows", stft.mel_bins, g.freq));
        }
        if codebook.len() != g.codebook_size || codebook.dim() != PATCH_DIM {
            return fail(format!(
                "codebook is {}x{}, generator expects {}x{PATCH_DIM}",
                codebook.len(),
                codebook.dim(),
                g.codebook_size
            ));
        }
        if let Some(h) = generator.codebook_hash() {
            if h != codebook.content_hash() {
                return Err(GeneratorError::CodebookMismatch { expected: h.to_string(), found: codebook.content_hash() }.into());
            }
        }
        Ok(Self { generator, codebook, stft, vocoder, schedule })
    }

    pub fn check_plan(&self, plan: &OutpaintPlan) -> Result<()> {
        plan.validate(&self.stft)?;
        if plan.segment_columns != self.generator.config().time {
            return Err(StreamError::Plan(format!(
                "plan has {} columns, generator grid has {}",
                plan.segment_columns,
                self.generator.config().time
            )));
        }
        Ok(())
    }
}

/// One output channel: its prompt, guidance scale and token history.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub channel_id: usize,
    prompt: String,
    text: CondEmbedding,
    pub cfg_scale: CfgScale,
    pub last_grid: Option<TokenGrid>,
    pub segments_emitted: u64,
    /// Samples emitted so far.
    pub playback_cursor: u64,
    tail: Vec<f32>,
}

impl ChannelState {
    pub fn new(channel_id: usize, prompt: &str, cfg_scale: CfgScale) -> Result<Self> {
        Self::with_embedding_dim(channel_id, prompt, cfg_scale, EMBED_DIM)
    }

    /// For generators whose condition width is not [`EMBED_DIM`].
    pub fn with_embedding_dim(channel_id: usize, prompt: &str, cfg_scale: CfgScale, dim: usize) -> Result<Self> {
        Ok(Self {
            channel_id,
            prompt: prompt.to_string(),
            text: embed_text_dim(prompt, dim)?,
            cfg_scale,
            last_grid: None,
            segments_emitted: 0,
            playback_cursor: 0,
            tail: Vec::new(),
        })
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    pub fn text_embedding(&self) -> &CondEmbedding {
        &self.text
    }

    pub fn set_prompt(&mut self, prompt: &str) -> Result<()> {
        self.text = embed_text_dim(prompt, self.text.dim())?;
        self.prompt = prompt.to_string();
        Ok(())
    }

    /// Audio held back for the next seam.
    pub fn pending_tail(&self) -> &[f32] {
        &self.tail
    }

    /// Releases the held-back tail, e.g. when the stream ends.
    pub fn take_tail(&mut self) -> Vec<f32> {
        let t = std::mem::take(&mut self.tail);
        self.playback_cursor += t.len() as u64;
        t
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one channel's segment, independent across channels and segments.
pub fn segment_seed(master: u64, channel: usize, segment: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ channel as u64) ^ segment)
}

/// Short hex digest of a grid's tokens, for logs.
pub fn grid_hash(g: &TokenGrid) -> String {
    let mut h = sha2::Sha256::new();
    h.update((g.freq() as u32).to_le_bytes());
    h.update((g.time() as u32).to_le_bytes());
    for &i in g.indices() {
        h.update(i.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn crossfade_slices(tail: &[f32], head: &[f32], law: CrossfadeLaw) -> Vec<f32> {
    let n = tail.len();
    tail.iter()
        .zip(head)
        .enumerate()
        .map(|(i, (&t, &h))| {
            let a = i as f64 / n as f64;
            match law {
                CrossfadeLaw::Linear => (t as f64 + a * (h as f64 - t as f64)) as f32,
                CrossfadeLaw::EqualPower => {
                    let th = std::f64::consts::FRAC_PI_2 * a;
                    (t as f64 * th.cos() + h as f64 * th.sin()).clamp(-1.0, 1.0) as f32
                }
            }
        })
        .collect()
}

/// Fades from `tail` into `head` over their first `length` samples.
pub fn crossfade(tail: &Waveform, head: &Waveform, length: usize, law: CrossfadeLaw) -> Result<Waveform> {
    if length > tail.len() || length > head.len() {
        return Err(StreamError::Crossfade { length, tail: tail.len(), head: head.len() });
    }
    if tail.sample_rate() != head.sample_rate() {
        return Err(DspError::RateMismatch { expected: tail.sample_rate(), found: head.sample_rate() }.into());
    }
    let out = crossfade_slices(&tail.samples()[..length], &head.samples()[..length], law);
    Ok(Waveform::new(out, tail.sample_rate())?)
}

/// One generated segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutput {
    pub index: u64,
    pub grid: TokenGrid,
    /// Newly emitted samples: `segment − crossfade` for the first segment,
    /// `segment − overlap` afterwards.
    pub audio: Vec<f32>,
}

/// Generates the channel's next segment and advances its state.
///
/// The first `overlap_columns` columns of the new grid are the previous
/// grid's last columns, held fixed while the rest are decoded.
pub fn outpaint_step(
    ch: &mut ChannelState,
    pipe: &Pipeline,
    audio_cond: Option<&CondEmbedding>,
    plan: &OutpaintPlan,
    seed: u64,
) -> Result<SegmentOutput> {
    pipe.check_plan(plan)?;
    let g = pipe.generator.config();
    let (cols, keep) = (plan.segment_columns, plan.overlap_columns);
    let mut init = TokenGrid::masked(g.freq, cols);
    if let Some(prev) = &ch.last_grid {
        if prev.shape() != init.shape() || !prev.is_complete() {
            return Err(GeneratorError::ShapeMismatch("previous grid does not fit the plan".into()).into());
        }
        init.put_columns(0, &prev.columns(cols - keep, cols));
    }
    let conds = Conditions { text: Some(&ch.text), audio: audio_cond };
    let decoded = iterative_decode(&pipe.generator, &init, conds, ch.cfg_scale, &pipe.schedule, seed)?;
    let mel = vq_decode(&decoded.grid, &pipe.codebook, &pipe.stft, None)?;

    let hop = pipe.stft.hop_size;
    let seg = plan.segment_samples(&pipe.stft);
    let fade = plan.crossfade_samples(&pipe.stft);
    let first = ch.last_grid.is_none();
    // local sample where this segment's emitted audio (fade included) starts
    let start = if first { 0 } else { plan.overlap_samples(&pipe.stft) - fade };
    let from_frame = (start / hop).saturating_sub(plan.vocoder_margin_frames);
    let sub = mel.slice_frames(from_frame, mel.frames());
    let wav = pipe.vocoder.vocode(&sub, splitmix(seed ^ 0x5EED_0F_C0DE))?.waveform;
    let local = wav.samples();
    let offset = from_frame * hop;
    let at = |i: usize| i - offset;

    let mut audio = Vec::with_capacity(seg);
    if first {
        audio.extend_from_slice(&local[..at(seg - fade)]);
    } else {
        let head = &local[at(start)..at(start + fade)];
        audio.extend(crossfade_slices(&ch.tail, head, plan.crossfade_law));
        audio.extend_from_slice(&local[at(start + fade)..at(seg - fade)]);
    }
    ch.tail = local[at(seg - fade)..at(seg)].to_vec();
    ch.playback_cursor += audio.len() as u64;
    let index = ch.segments_emitted;
    ch.segments_emitted += 1;
    ch.last_grid = Some(decoded.grid.clone());
    Ok(SegmentOutput { index, grid: decoded.grid, audio })
}
