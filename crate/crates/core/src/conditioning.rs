//! Deterministic stand-ins for a learned text/audio embedder.
//!
//! Text is hashed as character n-grams into a signed bag; audio is summarized
//! by log-mel statistics and projected through a fixed random matrix. Both
//! land in the same unit-norm space so the generator can take either.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{resample, wav_to_mel, DspError, StftConfig, Waveform};
use crate::generator::Generator;

/// Default embedding width.
pub const EMBED_DIM: usize = 64;
const PROJECTION_SEED: u64 = 0x0C1A_9E5E_ED00_0001;

#[derive(Debug, Error)]
pub enum ConditioningError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("audio query is {0:.3} s; at least 1 s is needed")]
    TooShort(f64),
    #[error("no generator loaded")]
    NoModel,
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error(transparent)]
    Dsp(#[from] DspError),
}

pub type Result<T> = std::result::Result<T, ConditioningError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Audio,
    Null,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondEmbedding {
    pub vector: Vec<f32>,
    pub modality: Modality,
}

impl CondEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &CondEmbedding) -> f64 {
        let dot: f64 = self.vector.iter().zip(&other.vector).map(|(&a, &b)| a as f64 * b as f64).sum();
        dot / (self.norm() * other.norm())
    }
}

fn fnv1a(bytes: &[u8], salt: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ salt;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn unit(v: Vec<f64>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

/// Embeds a prompt with [`EMBED_DIM`] dimensions.
pub fn embed_text(prompt: &str) -> Result<CondEmbedding> {
    embed_text_dim(prompt, EMBED_DIM)
}

pub fn embed_text_dim(prompt: &str, dim: usize) -> Result<CondEmbedding> {
    if dim == 0 {
        return Err(ConditioningError::ZeroDim);
    }
    let text = prompt.trim().to_lowercase();
    if text.is_empty() {
        return Err(ConditioningError::EmptyPrompt);
    }
    let chars: Vec<char> = std::iter::once('\u{2}').chain(text.chars()).chain(std::iter::once('\u{3}')).collect();
    let mut v = vec![0.0f64; dim];
    let mut add = |gram: &str, salt: u64| {
        let h = fnv1a(gram.as_bytes(), salt);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    };
    for n in 2..=4 {
        for w in chars.windows(n) {
            add(&w.iter().collect::<String>(), n as u64);
        }
    }
    for word in text.split_whitespace() {
        add(word, 0xA11);
    }
    if v.iter().all(|&x| x == 0.0) {
        // signed collisions cancelled out; fall back to a single hashed axis
        v[(fnv1a(text.as_bytes(), 0) % dim as u64) as usize] = 1.0;
    }
    Ok(CondEmbedding { vector: unit(v), modality: Modality::Text })
}

/// Embeds an audio query with [`EMBED_DIM`] dimensions.
pub fn embed_audio(w: &Waveform) -> Result<CondEmbedding> {
    embed_audio_dim(w, EMBED_DIM)
}

/// Per-band log-mel mean and spread, spectral-flux mean and spread, and a
/// constant term, projected through a fixed Gaussian matrix.
pub fn embed_audio_dim(w: &Waveform, dim: usize) -> Result<CondEmbedding> {
    if dim == 0 {
        return Err(ConditioningError::ZeroDim);
    }
    if w.duration_secs() < 1.0 {
        return Err(ConditioningError::TooShort(w.duration_secs()));
    }
    let cfg = StftConfig::studio_48k();
    let w48 = if w.sample_rate() == cfg.sample_rate { w.clone() } else { resample(w, cfg.sample_rate)? };
    let mel = wav_to_mel(&w48, &cfg)?;
    let data = mel.data().mapv(f64::from);
    let mean = data.mean_axis(Axis(1)).expect("frames > 0");
    let std = data.std_axis(Axis(1), 0.0);
    let flux: Vec<f64> = data
        .axis_windows(Axis(1), 2)
        .into_iter()
        .map(|pair| pair.column(1).iter().zip(pair.column(0)).map(|(b, a)| (b - a).max(0.0)).sum::<f64>() / data.nrows() as f64)
        .collect();
    let flux = Array1::from(flux);
    let (fm, fs) = if flux.is_empty() { (0.0, 0.0) } else { (flux.mean().unwrap_or(0.0), flux.std(0.0)) };
    let mut features = Vec::with_capacity(2 * mean.len() + 3);
    features.extend(mean.iter().copied());
    features.extend(std.iter().copied());
    features.extend([fm, fs, 1.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED ^ dim as u64);
    let proj = Array2::from_shape_simple_fn((dim, features.len()), || StandardNormal.sample(&mut rng));
    let v = proj.dot(&Array1::from(features)).to_vec();
    Ok(CondEmbedding { vector: unit(v), modality: Modality::Audio })
}

/// The loaded model's learned null vector.
pub fn null_embedding(model: Option<&Generator>) -> Result<CondEmbedding> {
    model.map(Generator::null_embedding).ok_or(ConditioningError::NoModel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorConfig;
    use rand::Rng;

    fn tone(freq: f32, secs: f32) -> Waveform {
        let n = (48_000.0 * secs) as usize;
        Waveform::new(
            (0..n).map(|i| 0.5 * (std::f32::consts::TAU * freq * i as f32 / 48_000.0).sin()).collect(),
            48_000,
        )
        .unwrap()
    }

    #[test]
    fn text_is_deterministic_and_unit() {
        let a = embed_text("Anechoic Sphere").unwrap();
        assert_eq!(a, embed_text("Anechoic Sphere").unwrap());
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert_eq!(a.dim(), EMBED_DIM);
        assert_eq!(a.modality, Modality::Text);
        assert!(a.cosine(&embed_text("Anechoic sphere ii").unwrap()) < 1.0);
    }

    #[test]
    fn empty_prompt_rejected() {
        assert!(matches!(embed_text(""), Err(ConditioningError::EmptyPrompt)));
        assert!(matches!(embed_text("   "), Err(ConditioningError::EmptyPrompt)));
    }

    #[test]
    fn text_survives_serialization() {
        let a = embed_text("glass rain").unwrap();
        let back: CondEmbedding = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn audio_separates_noise_from_tone() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Waveform::new((0..48_000).map(|_| rng.random_range(-0.5..0.5)).collect(), 48_000).unwrap();
        let a = embed_audio(&tone(440.0, 1.0)).unwrap();
        let b = embed_audio(&noise).unwrap();
        assert!((a.norm() - 1.0).abs() < 1e-6 && (b.norm() - 1.0).abs() < 1e-6);
        assert!(a.cosine(&b) < 0.99, "{}", a.cosine(&b));
        assert_eq!(a, embed_audio(&tone(440.0, 1.0)).unwrap());
    }

    #[test]
    fn audio_edge_cases() {
        let s = embed_audio(&Waveform::silence(48_000, 48_000).unwrap()).unwrap();
        assert!(s.vector.iter().all(|v| v.is_finite()));
        assert!(matches!(embed_audio(&tone(440.0, 0.5)), Err(ConditioningError::TooShort(_))));
        let other_rate = Waveform::new(vec![0.1; 22_050], 22_050).unwrap();
        assert_eq!(embed_audio(&other_rate).unwrap().dim(), EMBED_DIM);
    }

    #[test]
    fn null_needs_a_model() {
        assert!(matches!(null_embedding(None), Err(ConditioningError::NoModel)));
        let m = Generator::new(GeneratorConfig { blocks: 0, freq: 1, time: 2, ..GeneratorConfig::toy() }).unwrap();
        let a = null_embedding(Some(&m)).unwrap();
        assert_eq!(a, null_embedding(Some(&m)).unwrap());
        assert_eq!(a.modality, Modality::Null);
        let mut g = crate::codec::TokenGrid::masked(1, 2);
        g.set(0, 3);
        assert_eq!(m.forward(&g, Some(&a)).unwrap().cells(), &[1]);
    }
}
