//! The engine's single TOML configuration file.
//!
//! Relative paths inside the file resolve against the file's directory.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use octaloop_core::codec::PATCH;
use octaloop_core::dsp::wav::SampleFormat;
use octaloop_core::dsp::StftConfig;
use octaloop_core::generator::{CfgScale, GeneratorConfig, MaskSchedule, ScheduleKind, TrainParams};
use octaloop_core::streamer::OutpaintPlan;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSpec;
use crate::error::{EngineError, Result};

pub const CONFIG_VERSION: u32 = 1;
/// Overrides the config path for every verb.
pub const CONFIG_ENV: &str = "OCTALOOP_CONFIG";
/// The shipped default, also installed as `config/default.toml`.
pub const DEFAULT_CONFIG: &str = include_str!("../../../config/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AudioMode {
    /// One embedding of `audio_query` conditions every channel.
    #[default]
    Shared,
    /// Text prompts only.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecSection {
    pub codebook_size: usize,
    pub kmeans_iters: usize,
    /// Patches sampled from the corpus for fitting; 0 uses all.
    pub max_patches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSection {
    pub schedule: ScheduleKind,
    pub griffin_lim_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockKind {
    Wall,
    /// Simulated time with a fixed modeled latency per segment.
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    pub clock: ClockKind,
    pub virtual_latency_ms: f64,
    pub block_ms: f64,
    pub stats_interval_s: f64,
    pub prefetch: usize,
    /// Run length; absent means until stopped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkKind {
    /// One interleaved N-channel WAV.
    Interleaved,
    /// `ch0.wav` … in a directory.
    MonoDir,
    /// Discard, keeping only a digest of the stream.
    Null,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkSpec {
    pub kind: SinkKind,
    pub path: PathBuf,
    pub format: SampleFormat,
    /// Header rewrite period for the interleaved file.
    pub flush_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: String,
    /// Events held for slow push-feed subscribers before they skip ahead.
    pub event_buffer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub prompt: String,
    pub cfg_scale: CfgScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub version: u32,
    pub master_seed: u64,
    pub artifacts_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_query: Option<PathBuf>,
    #[serde(default)]
    pub audio_mode: AudioMode,
    pub stft: StftConfig,
    pub codec: CodecSection,
    pub generator: GeneratorConfig,
    pub train: TrainParams,
    pub decode: DecodeSection,
    pub plan: OutpaintPlan,
    pub stream: StreamSection,
    pub sink: SinkSpec,
    pub service: ServiceSection,
    pub corpus: CorpusSpec,
    pub channels: Vec<ChannelSpec>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl EngineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    /// Parses and validates; relative paths will resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        // read the version first so an old file fails as a version problem
        #[derive(Deserialize)]
        struct Probe {
            version: Option<u32>,
        }
        if let Ok(Probe { version: Some(v) }) = toml::from_str::<Probe>(text) {
            if v != CONFIG_VERSION {
                return Err(EngineError::Version(format!("config version {v}, this build reads {CONFIG_VERSION}")));
            }
        }
        let mut cfg: EngineConfig = toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn default_config() -> Self {
        Self::from_toml(DEFAULT_CONFIG, ".").expect("shipped default is valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_toml()).map_err(EngineError::io(path.as_ref()))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: impl Into<PathBuf>) {
        self.base_dir = dir.into();
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn artifacts(&self) -> PathBuf {
        self.resolve(&self.artifacts_dir)
    }

    pub fn codebook_path(&self) -> PathBuf {
        self.artifacts().join("codebook.olcb")
    }

    pub fn generator_path(&self) -> PathBuf {
        self.artifacts().join("generator.olmg")
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.artifacts().join("corpus")
    }

    pub fn schedule(&self) -> MaskSchedule {
        MaskSchedule { kind: self.decode.schedule, total_iters: self.generator.decode_iters }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EngineError::Config(m));
        if self.version != CONFIG_VERSION {
            return Err(EngineError::Version(format!(
                "config version {}, this build reads {CONFIG_VERSION}",
                self.version
            )));
        }
        self.stft.validate().map_err(|e| EngineError::Config(format!("stft: {e}")))?;
        self.generator.validate().map_err(|e| EngineError::Config(format!("generator: {e}")))?;
        let g = &self.generator;
        if self.stft.mel_bins != g.freq * PATCH {
            return bad(format!("stft.mel_bins {} must equal 16 × generator.freq ({})", self.stft.mel_bins, g.freq * PATCH));
        }
        if self.codec.codebook_size != g.codebook_size {
            return bad(format!(
                "codec.codebook_size {} differs from generator.codebook_size {}",
                self.codec.codebook_size, g.codebook_size
            ));
        }
        if self.codec.codebook_size < 2 {
            return bad("codec.codebook_size must be at least 2".into());
        }
        if self.plan.segment_columns != g.time {
            return bad(format!(
                "plan.segment_columns {} must equal generator.time {}",
                self.plan.segment_columns, g.time
            ));
        }
        self.plan.validate(&self.stft).map_err(|e| EngineError::Config(format!("plan: {e}")))?;
        self.schedule().validate().map_err(|e| EngineError::Config(format!("decode: {e}")))?;
        if self.decode.griffin_lim_iters == 0 {
            return bad("decode.griffin_lim_iters must be at least 1".into());
        }
        let t = &self.train;
        if t.batch_size == 0 || !(t.learning_rate > 0.0) || !(0.0..=1.0).contains(&t.cond_dropout) || !(t.grad_clip >= 0.0) {
            return bad("train: need batch_size ≥ 1, learning_rate > 0, cond_dropout in [0, 1], grad_clip ≥ 0".into());
        }
        let s = &self.stream;
        if !(s.block_ms > 0.0 && s.stats_interval_s > 0.0 && s.virtual_latency_ms >= 0.0) || s.prefetch == 0 {
            return bad("stream: block_ms and stats_interval_s must be positive, virtual_latency_ms ≥ 0, prefetch ≥ 1".into());
        }
        if let Some(d) = s.duration_s {
            if !(d > 0.0 && d.is_finite()) {
                return bad("stream.duration_s must be positive".into());
            }
        }
        if !(self.sink.flush_ms >= 0.0) {
            return bad("sink.flush_ms must be ≥ 0".into());
        }
        if self.service.event_buffer == 0 {
            return bad("service.event_buffer must be at least 1".into());
        }
        self.corpus.validate()?;
        if self.channels.is_empty() {
            return bad("at least one [[channels]] entry is needed".into());
        }
        for (i, c) in self.channels.iter().enumerate() {
            if c.prompt.trim().is_empty() {
                return bad(format!("channels[{i}].prompt is empty"));
            }
        }
        Ok(())
    }

    pub fn block_samples(&self) -> usize {
        ((self.stream.block_ms * self.stft.sample_rate as f64 / 1000.0).round() as usize).max(1)
    }
}
