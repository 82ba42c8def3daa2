//! Waveform and mel-spectrogram domain.
//!
//! Everything here is a pure function over value types. The 48 kHz preset
//! produces 960 frames for 10 s of audio (hop 500); the legacy 22.05 kHz
//! preset produces 848 frames of 80 bins for 848 hops of audio.

mod griffin_lim;
mod mel;
mod resample;
pub mod wav;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use griffin_lim::{mel_to_wav, GriffinLim, Vocoder, VocoderOutput};
pub use mel::{wav_to_mel, MelFilterbank, Stft};
pub use resample::resample;

/// Value a silent bin takes after log compression; also the pad value used
/// by the codec when the frame axis is extended.
pub const LOG_FLOOR: f32 = 0.0;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("signal is empty")]
    EmptySignal,
    #[error("signal has {len} samples, fewer than one frame of {frame}")]
    TooShort { len: usize, frame: usize },
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("invalid sample rate {0}")]
    InvalidRate(u32),
    #[error("invalid stft config: {0}")]
    InvalidConfig(String),
    #[error("sample rate {found} does not match config rate {expected}")]
    RateMismatch { expected: u32, found: u32 },
    #[error("mel spectrogram has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, DspError>;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(DspError::InvalidRate(sample_rate));
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::NonFinite { index });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f32 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (sum / self.samples.len() as f64).sqrt() as f32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
}

impl WindowKind {
    pub(crate) fn coefficients(self, len: usize) -> Vec<f32> {
        match self {
            // periodic Hann, so overlapping frames sum to a constant
            WindowKind::Hann => (0..len)
                .map(|n| {
                    let phase = 2.0 * std::f64::consts::PI * n as f64 / len as f64;
                    (0.5 - 0.5 * phase.cos()) as f32
                })
                .collect(),
        }
    }
}

/// Analysis geometry for the mel front end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop_size: usize,
    pub window: WindowKind,
    pub mel_bins: usize,
    pub fmin: f32,
    pub fmax: f32,
    /// Gain `C` inside the `ln(1 + C·x)` compression.
    pub log_gain: f32,
}

impl StftConfig {
    /// 48 kHz installation geometry: 256 mel bins, hop 500, so 10 s maps to 960 frames.
    pub fn studio_48k() -> Self {
        Self {
            sample_rate: 48_000,
            fft_size: 2048,
            hop_size: 500,
            window: WindowKind::Hann,
            mel_bins: 256,
            fmin: 0.0,
            fmax: 24_000.0,
            log_gain: 1.0e5,
        }
    }

    /// 22.05 kHz geometry of the original open-data model: 80 bins, hop 256.
    pub fn legacy_22k() -> Self {
        Self {
            sample_rate: 22_050,
            fft_size: 1024,
            hop_size: 256,
            window: WindowKind::Hann,
            mel_bins: 80,
            fmin: 0.0,
            fmax: 11_025.0,
            log_gain: 1.0e5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DspError::InvalidConfig(msg.to_string()));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if self.fft_size < 2 || self.fft_size % 2 != 0 {
            return bad("fft_size must be even and at least 2");
        }
        if self.hop_size == 0 || self.hop_size > self.fft_size {
            return bad("hop_size must be in 1..=fft_size");
        }
        if self.mel_bins == 0 {
            return bad("mel_bins must be at least 1");
        }
        let nyquist = self.sample_rate as f32 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return bad("need 0 <= fmin < fmax <= sample_rate / 2");
        }
        if !(self.log_gain > 0.0 && self.log_gain.is_finite()) {
            return bad("log_gain must be positive");
        }
        Ok(())
    }

    pub fn freq_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples (center padding, `ceil(len / hop)`).
    pub fn frames_for(&self, len: usize) -> usize {
        len.div_ceil(self.hop_size)
    }

    pub fn samples_for_frames(&self, frames: usize) -> usize {
        frames * self.hop_size
    }

    pub fn frames_per_second(&self) -> f64 {
        self.sample_rate as f64 / self.hop_size as f64
    }

    pub(crate) fn compress(&self, magnitude: f32) -> f32 {
        (self.log_gain * magnitude.max(0.0)).ln_1p()
    }

    pub(crate) fn expand(&self, value: f32) -> f32 {
        value.max(0.0).exp_m1() / self.log_gain
    }
}

/// Log-compressed mel magnitudes, `mel_bins × frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    data: ndarray::Array2<f32>,
    config: StftConfig,
}

impl MelSpectrogram {
    pub fn new(data: ndarray::Array2<f32>, config: StftConfig) -> Result<Self> {
        if data.nrows() != config.mel_bins {
            return Err(DspError::ShapeMismatch {
                expected: (config.mel_bins, data.ncols()),
                found: data.dim(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DspError::InvalidConfig("mel contains non-finite values".into()));
        }
        Ok(Self { data, config })
    }

    pub fn data(&self) -> &ndarray::Array2<f32> {
        &self.data
    }

    pub fn into_data(self) -> ndarray::Array2<f32> {
        self.data
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn mel_bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    /// Frame range `[start, end)` as a new spectrogram.
    pub fn slice_frames(&self, start: usize, end: usize) -> MelSpectrogram {
        let end = end.min(self.frames());
        let start = start.min(end);
        MelSpectrogram {
            data: self.data.slice(ndarray::s![.., start..end]).to_owned(),
            config: self.config.clone(),
        }
    }
}
