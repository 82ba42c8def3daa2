use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::num_complex::Complex32;

use super::mel::{MelFilterbank, Stft};
use super::{MelSpectrogram, Result, Waveform};

/// Spectrogram-to-waveform stage. Implementations must be deterministic for
/// a given seed so streams can be replayed.
pub trait Vocoder: Send + Sync {
    fn vocode(&self, mel: &MelSpectrogram, seed: u64) -> Result<VocoderOutput>;
}

#[derive(Debug, Clone)]
pub struct VocoderOutput {
    pub waveform: Waveform,
    /// `‖|STFT(x)| − A‖ / ‖A‖` against the target linear magnitudes, when the
    /// vocoder tracks it.
    pub spectral_convergence: Option<f32>,
}

/// Phase reconstruction by alternating projections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GriffinLim {
    pub iterations: usize,
}

impl Default for GriffinLim {
    fn default() -> Self {
        Self { iterations: 32 }
    }
}

/// Inverts a log-mel spectrogram with `iterations` Griffin-Lim rounds and
/// phase seed 0. Output has `frames * hop` samples.
pub fn mel_to_wav(m: &MelSpectrogram, iterations: usize) -> Result<Waveform> {
    Ok(GriffinLim {
        iterations: iterations.max(1),
    }
    .vocode(m, 0)?
    .waveform)
}

impl GriffinLim {
    fn target_magnitudes(mel: &MelSpectrogram, bank: &MelFilterbank, stft: &Stft) -> Vec<f32> {
        let cfg = mel.config();
        let bins = stft.freq_bins();
        let frames = mel.frames();
        let inv_scale = 1.0 / stft.amplitude_scale();
        let mut target = vec![0.0f32; frames * bins];
        let mut bands = vec![0.0f32; cfg.mel_bins];
        for (i, row) in target.chunks_exact_mut(bins).enumerate() {
            for (m, b) in bands.iter_mut().enumerate() {
                *b = cfg.expand(mel.data()[[m, i]]) * inv_scale;
            }
            bank.spread(&bands, row);
        }
        target
    }
}

impl Vocoder for GriffinLim {
    fn vocode(&self, mel: &MelSpectrogram, seed: u64) -> Result<VocoderOutput> {
        let cfg = mel.config();
        cfg.validate()?;
        let frames = mel.frames();
        let out_len = cfg.samples_for_frames(frames);
        if frames == 0 {
            return Ok(VocoderOutput {
                waveform: Waveform::new(Vec::new(), cfg.sample_rate)?,
                spectral_convergence: None,
            });
        }
        let stft = Stft::new(cfg);
        let bank = MelFilterbank::new(cfg);
        let target = Self::target_magnitudes(mel, &bank, &stft);
        let target_norm = target.iter().map(|a| a * a).sum::<f32>().sqrt();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec: Vec<Complex32> = target
            .iter()
            .map(|&a| Complex32::from_polar(a, rng.random::<f32>() * std::f32::consts::TAU))
            .collect();

        // The inner loop works on the full frame span, with no padding or
        // cropping, so each round is an exact pair of projections.
        let mut analysis = Vec::with_capacity(spec.len());
        let mut signal = stft.synthesize(&mut spec, frames);
        for _ in 0..self.iterations {
            stft.analyze_into(&signal, frames, &mut analysis);
            project_magnitude(&mut analysis, &target);
            signal = stft.synthesize(&mut analysis, frames);
        }

        stft.analyze_into(&signal, frames, &mut analysis);
        let err = analysis
            .iter()
            .zip(&target)
            .map(|(c, &a)| {
                let d = c.norm() - a;
                d * d
            })
            .sum::<f32>()
            .sqrt();
        let spectral_convergence = if target_norm > 0.0 {
            Some(err / target_norm)
        } else {
            None
        };

        let half = cfg.fft_size / 2;
        let mut samples = signal[half..half + out_len].to_vec();
        for s in &mut samples {
            *s = s.clamp(-1.0, 1.0);
        }
        Ok(VocoderOutput {
            waveform: Waveform::new(samples, cfg.sample_rate)?,
            spectral_convergence,
        })
    }
}

fn project_magnitude(spec: &mut [Complex32], target: &[f32]) {
    for (c, &a) in spec.iter_mut().zip(target) {
        let n = c.norm();
        *c = if n > 1e-12 {
            *c * (a / n)
        } else {
            Complex32::new(a, 0.0)
        };
    }
}
