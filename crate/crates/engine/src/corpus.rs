//! Synthetic training corpus: tones, chirps, band-passed noise and impulse
//! trains, with a JSON manifest describing every clip.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use octaloop_core::dsp::wav::{read_wav, write_mono, SampleFormat};
use octaloop_core::dsp::Waveform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Tone,
    Chirp,
    Noise,
    Impulses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub clips: usize,
    pub seconds: f64,
    /// Assigned round-robin across clips.
    pub families: Vec<Family>,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clips == 0 || self.families.is_empty() || !(self.seconds > 0.0 && self.seconds.is_finite()) {
            return Err(EngineError::Config("corpus: need clips ≥ 1, seconds > 0 and at least one family".into()));
        }
        Ok(())
    }
}

/// Parameters of one synthetic clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Source {
    Tone { freq_hz: f64, amplitude: f64 },
    /// Exponential sweep.
    Chirp { start_hz: f64, end_hz: f64, amplitude: f64 },
    /// White noise through a band-pass biquad.
    Noise { center_hz: f64, q: f64, amplitude: f64 },
    /// Alternating-sign impulses, each ringing a damped resonator.
    Impulses { rate_hz: f64, ring_hz: f64, decay_ms: f64, amplitude: f64 },
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

impl Source {
    pub fn random(family: Family, rng: &mut impl Rng) -> Self {
        let amplitude = rng.random_range(0.2..0.6);
        match family {
            Family::Tone => Source::Tone { freq_hz: log_uniform(rng, 60.0, 8000.0).round(), amplitude },
            Family::Chirp => {
                let (lo, hi) = (log_uniform(rng, 50.0, 500.0), log_uniform(rng, 2000.0, 16_000.0));
                let (start_hz, end_hz) = if rng.random() { (lo, hi) } else { (hi, lo) };
                Source::Chirp { start_hz, end_hz, amplitude }
            }
            Family::Noise => Source::Noise { center_hz: log_uniform(rng, 100.0, 12_000.0), q: rng.random_range(0.7..8.0), amplitude },
            Family::Impulses => Source::Impulses {
                rate_hz: rng.random_range(1.0..12.0),
                ring_hz: log_uniform(rng, 200.0, 6000.0),
                decay_ms: rng.random_range(5.0..80.0),
                amplitude,
            },
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Source::Tone { .. } => Family::Tone,
            Source::Chirp { .. } => Family::Chirp,
            Source::Noise { .. } => Family::Noise,
            Source::Impulses { .. } => Family::Impulses,
        }
    }

    /// Short text used as the clip's prompt during training.
    pub fn label(&self) -> String {
        match self {
            Source::Tone { freq_hz, .. } => format!("tone {freq_hz:.0} Hz"),
            Source::Chirp { start_hz, end_hz, .. } => {
                format!("{} chirp {start_hz:.0} to {end_hz:.0} Hz", if end_hz > start_hz { "rising" } else { "falling" })
            }
            Source::Noise { center_hz, .. } => format!("noise band around {center_hz:.0} Hz"),
            Source::Impulses { rate_hz, .. } => format!("impulse train {rate_hz:.1} per second"),
        }
    }

    /// `len` samples at `rate`. `rng` only feeds the noise family.
    pub fn render(&self, len: usize, rate: u32, rng: &mut impl Rng) -> Vec<f32> {
        let sr = rate as f64;
        let nyq = sr / 2.0;
        let mut out = vec![0.0f64; len];
        match *self {
            Source::Tone { freq_hz, amplitude } => {
                for (i, v) in out.iter_mut().enumerate() {
                    *v = amplitude * (TAU * freq_hz * i as f64 / sr).sin();
                }
            }
            Source::Chirp { start_hz, end_hz, amplitude } => {
                let dur = len as f64 / sr;
                let k = (end_hz.min(nyq * 0.95) / start_hz.min(nyq * 0.95)).ln();
                let f0 = start_hz.min(nyq * 0.95);
                for (i, v) in out.iter_mut().enumerate() {
                    let t = i as f64 / sr;
                    let phase = if k.abs() < 1e-12 { TAU * f0 * t } else { TAU * f0 * dur / k * ((t / dur * k).exp() - 1.0) };
                    *v = amplitude * phase.sin();
                }
            }
            Source::Noise { center_hz, q, amplitude } => {
                // band-pass biquad, 0 dB peak gain
                let w0 = TAU * center_hz.min(nyq * 0.95) / sr;
                let alpha = w0.sin() / (2.0 * q);
                let a0 = 1.0 + alpha;
                let (b0, b2) = (alpha / a0, -alpha / a0);
                let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
                let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
                for v in out.iter_mut() {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    let y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
                    (x2, x1, y2, y1) = (x1, x, y1, y);
                    *v = y;
                }
                let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if peak > 0.0 {
                    out.iter_mut().for_each(|v| *v *= amplitude / peak);
                }
            }
            Source::Impulses { rate_hz, ring_hz, decay_ms, amplitude } => {
                let period = (sr / rate_hz).round().max(1.0) as usize;
                let r = (-1.0 / (decay_ms * 1e-3 * sr)).exp();
                let w = TAU * ring_hz.min(nyq * 0.95) / sr;
                let (c1, c2) = (2.0 * r * w.cos(), -r * r);
                let (mut y1, mut y2) = (0.0, 0.0);
                for (i, v) in out.iter_mut().enumerate() {
                    let x = if i % period == 0 { if (i / period) % 2 == 0 { 1.0 } else { -1.0 } } else { 0.0 };
                    let y = x + c1 * y1 + c2 * y2;
                    (y2, y1) = (y1, y);
                    *v = y;
                }
                let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if peak > 0.0 {
                    out.iter_mut().for_each(|v| *v *= amplitude / peak);
                }
            }
        }
        // 10 ms fades so clip edges do not click
        let fade = ((0.01 * sr) as usize).min(len / 2);
        for i in 0..fade {
            let g = i as f64 / fade as f64;
            out[i] *= g;
            out[len - 1 - i] *= g;
        }
        out.into_iter().map(|v| v as f32).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub label: String,
    pub seconds: f64,
    #[serde(flatten)]
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub sample_rate: u32,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub entry: ManifestEntry,
    pub wave: Waveform,
}

fn clip_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_add(1).wrapping_mul(0xA24B_AED4_963E_E407)
}

/// Deterministic per `seed`; clip `i` depends only on `seed` and `i`.
pub fn synth_corpus(spec: &CorpusSpec, seed: u64, sample_rate: u32) -> Result<Vec<Clip>> {
    spec.validate()?;
    let len = (spec.seconds * sample_rate as f64).round() as usize;
    (0..spec.clips)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(seed, i));
            let source = Source::random(spec.families[i % spec.families.len()], &mut rng);
            let wave = Waveform::new(source.render(len, sample_rate, &mut rng), sample_rate)?;
            let entry = ManifestEntry {
                file: format!("clip_{i:04}.wav"),
                label: source.label(),
                seconds: len as f64 / sample_rate as f64,
                source,
            };
            Ok(Clip { entry, wave })
        })
        .collect()
}

/// Writes 32-bit float WAVs plus `manifest.json` into `dir`.
pub fn write_corpus(dir: &Path, clips: &[Clip], seed: u64) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(EngineError::io(dir))?;
    let sample_rate = clips.first().map_or(0, |c| c.wave.sample_rate());
    for c in clips {
        write_mono(dir.join(&c.entry.file), &c.wave, SampleFormat::Float32)?;
    }
    let manifest =
        Manifest { version: MANIFEST_VERSION, seed, sample_rate, entries: clips.iter().map(|c| c.entry.clone()).collect() };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(EngineError::io(path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path: PathBuf = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(EngineError::io(&path))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
    if m.version != MANIFEST_VERSION {
        return Err(EngineError::Version(format!("manifest version {}, this build reads {MANIFEST_VERSION}", m.version)));
    }
    Ok(m)
}

/// Loads every clip listed in the manifest, mixing multichannel files to mono.
pub fn read_corpus(dir: &Path) -> Result<Vec<Clip>> {
    let m = read_manifest(dir)?;
    m.entries
        .into_iter()
        .map(|entry| {
            let chans = read_wav(dir.join(&entry.file))?;
            let rate = chans[0].sample_rate();
            let n = chans.len() as f32;
            let mono: Vec<f32> =
                (0..chans[0].len()).map(|i| chans.iter().map(|c| c.samples()[i]).sum::<f32>() / n).collect();
            Ok(Clip { entry, wave: Waveform::new(mono, rate)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use realfft::RealFftPlanner;

    fn spec(clips: usize, seconds: f64) -> CorpusSpec {
        CorpusSpec { clips, seconds, families: vec![Family::Tone, Family::Chirp, Family::Noise, Family::Impulses] }
    }

    fn peak_hz(x: &[f32], rate: u32) -> f64 {
        let mut planner = RealFftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(x.len());
        let mut input: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut out = fft.make_output_vec();
        fft.process(&mut input, &mut out).unwrap();
        let k = (0..out.len()).max_by(|&a, &b| out[a].norm().total_cmp(&out[b].norm())).unwrap();
        k as f64 * rate as f64 / x.len() as f64
    }

    #[test]
    fn tone_peaks_at_its_frequency() {
        let s = Source::Tone { freq_hz: 440.0, amplitude: 0.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = s.render(48_000, 48_000, &mut rng);
        // 1 Hz bins
        assert_eq!(peak_hz(&x, 48_000), 440.0);
        assert_eq!(s.label(), "tone 440 Hz");
    }

    #[test]
    fn noise_concentrates_near_its_center() {
        let s = Source::Noise { center_hz: 3000.0, q: 8.0, amplitude: 0.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = s.render(48_000, 48_000, &mut rng);
        assert!((peak_hz(&x, 48_000) - 3000.0).abs() < 400.0);
        assert!(x.iter().all(|v| v.abs() <= 0.5 + 1e-6));
    }

    #[test]
    fn total_duration_is_clips_times_seconds() {
        let c = synth_corpus(&spec(10, 2.5), 3, 8000).unwrap();
        let total: f64 = c.iter().map(|c| c.wave.duration_secs()).sum();
        assert!((total - 25.0).abs() < 1e-9);
        let fams: Vec<Family> = c.iter().map(|c| c.entry.source.family()).collect();
        assert_eq!(&fams[..5], &[Family::Tone, Family::Chirp, Family::Noise, Family::Impulses, Family::Tone]);
        assert!(c.iter().all(|c| c.wave.samples().iter().all(|v| v.is_finite() && v.abs() <= 1.0)));
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let s = spec(4, 1.0);
        write_corpus(a.path(), &synth_corpus(&s, 9, 48_000).unwrap(), 9).unwrap();
        write_corpus(b.path(), &synth_corpus(&s, 9, 48_000).unwrap(), 9).unwrap();
        for f in ["clip_0000.wav", "clip_0003.wav", MANIFEST_FILE] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let other = synth_corpus(&s, 10, 48_000).unwrap();
        assert_ne!(other, synth_corpus(&s, 9, 48_000).unwrap());
    }

    #[test]
    fn corpus_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let clips = synth_corpus(&spec(3, 1.0), 1, 48_000).unwrap();
        let m = write_corpus(dir.path(), &clips, 1).unwrap();
        assert_eq!(m.entries.len(), 3);
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back, clips);
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(json["entries"][1]["family"], "chirp");
    }

    #[test]
    fn bad_spec_is_a_config_error() {
        assert!(synth_corpus(&spec(0, 1.0), 0, 48_000).is_err());
        assert!(synth_corpus(&CorpusSpec { clips: 1, seconds: 1.0, families: vec![] }, 0, 48_000).is_err());
    }
}
