use std::sync::Arc;

use ndarray::Array2;
use realfft::num_complex::Complex32;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::{DspError, MelSpectrogram, Result, StftConfig, Waveform};

/// Short-time Fourier transform with a fixed frame layout: frame `i` starts at
/// sample `i * hop` of the (already padded) signal it is given.
#[derive(Clone)]
pub struct Stft {
    fft_size: usize,
    hop: usize,
    window: Vec<f32>,
    window_sum: f32,
    forward: Arc<dyn RealToComplex<f32>>,
    inverse: Arc<dyn ComplexToReal<f32>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("fft_size", &self.fft_size)
            .field("hop", &self.hop)
            .finish()
    }
}

impl Stft {
    pub fn new(cfg: &StftConfig) -> Self {
        let mut planner = RealFftPlanner::<f32>::new();
        let window = cfg.window.coefficients(cfg.fft_size);
        let window_sum = window.iter().sum();
        Self {
            fft_size: cfg.fft_size,
            hop: cfg.hop_size,
            window,
            window_sum,
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
        }
    }

    pub fn freq_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Signal length spanned by `frames` frames.
    pub fn span(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.fft_size
        }
    }

    /// Scale mapping raw FFT magnitudes to amplitude (a full-scale sine peaks near 1).
    pub fn amplitude_scale(&self) -> f32 {
        2.0 / self.window_sum
    }

    /// Complex spectra, `frames × freq_bins`, row-major. `signal` must be at
    /// least `span(frames)` long.
    pub fn analyze_into(&self, signal: &[f32], frames: usize, out: &mut Vec<Complex32>) {
        assert!(signal.len() >= self.span(frames));
        let bins = self.freq_bins();
        out.clear();
        out.resize(frames * bins, Complex32::new(0.0, 0.0));
        let mut frame = vec![0.0f32; self.fft_size];
        let mut scratch = self.forward.make_scratch_vec();
        for (i, spec) in out.chunks_exact_mut(bins).enumerate() {
            let start = i * self.hop;
            for ((dst, &src), &w) in frame
                .iter_mut()
                .zip(&signal[start..start + self.fft_size])
                .zip(&self.window)
            {
                *dst = src * w;
            }
            self.forward
                .process_with_scratch(&mut frame, spec, &mut scratch)
                .expect("fft sizes are fixed at plan time");
        }
    }

    /// Magnitude spectra, `frames × freq_bins`.
    pub fn magnitudes(&self, signal: &[f32], frames: usize) -> Array2<f32> {
        let mut spec = Vec::new();
        self.analyze_into(signal, frames, &mut spec);
        let bins = self.freq_bins();
        Array2::from_shape_vec((frames, bins), spec.iter().map(|c| c.norm()).collect())
            .expect("shape matches")
    }

    /// Least-squares inverse (weighted overlap-add). Returns `span(frames)` samples.
    /// The spectra buffer is used as scratch.
    pub fn synthesize(&self, spectra: &mut [Complex32], frames: usize) -> Vec<f32> {
        let bins = self.freq_bins();
        assert_eq!(spectra.len(), frames * bins);
        let len = self.span(frames);
        let mut out = vec![0.0f32; len];
        let mut norm = vec![0.0f32; len];
        let mut frame = vec![0.0f32; self.fft_size];
        let mut scratch = self.inverse.make_scratch_vec();
        let inv_n = 1.0 / self.fft_size as f32;
        for (i, spec) in spectra.chunks_exact_mut(bins).enumerate() {
            spec[0].im = 0.0;
            spec[bins - 1].im = 0.0;
            self.inverse
                .process_with_scratch(spec, &mut frame, &mut scratch)
                .expect("fft sizes are fixed at plan time");
            let start = i * self.hop;
            for (k, (&y, &w)) in frame.iter().zip(&self.window).enumerate() {
                out[start + k] += w * y * inv_n;
                norm[start + k] += w * w;
            }
        }
        for (o, &n) in out.iter_mut().zip(&norm) {
            *o = if n > 1e-8 { *o / n } else { 0.0 };
        }
        out
    }
}

/// Triangular mel filterbank on the HTK mel scale, each row normalized to sum to 1.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    rows: Vec<(usize, Vec<f32>)>,
    column_sums: Vec<f32>,
    freq_bins: usize,
}

pub(crate) fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub(crate) fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl MelFilterbank {
    pub fn new(cfg: &StftConfig) -> Self {
        let freq_bins = cfg.freq_bins();
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
        let lo = hz_to_mel(cfg.fmin as f64);
        let hi = hz_to_mel(cfg.fmax as f64);
        let edges: Vec<f64> = (0..cfg.mel_bins + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.mel_bins + 1) as f64))
            .collect();

        let mut rows = Vec::with_capacity(cfg.mel_bins);
        for m in 0..cfg.mel_bins {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let first = (left / bin_hz).floor().max(0.0) as usize;
            let last = ((right / bin_hz).ceil() as usize).min(freq_bins - 1);
            let mut weights: Vec<f32> = (first..=last)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    up.min(down).max(0.0) as f32
                })
                .collect();
            let mut start = first;
            let sum: f32 = weights.iter().sum();
            if sum <= 0.0 {
                // band narrower than one FFT bin
                start = ((center / bin_hz).round() as usize).min(freq_bins - 1);
                weights = vec![1.0];
            } else {
                weights.iter_mut().for_each(|w| *w /= sum);
            }
            rows.push((start, weights));
        }

        let mut column_sums = vec![0.0f32; freq_bins];
        for (start, weights) in &rows {
            for (k, w) in weights.iter().enumerate() {
                column_sums[start + k] += w;
            }
        }
        Self {
            rows,
            column_sums,
            freq_bins,
        }
    }

    pub fn mel_bins(&self) -> usize {
        self.rows.len()
    }

    pub fn freq_bins(&self) -> usize {
        self.freq_bins
    }

    /// Dense `mel_bins × freq_bins` matrix.
    pub fn dense(&self) -> Array2<f32> {
        let mut out = Array2::zeros((self.rows.len(), self.freq_bins));
        for (m, (start, weights)) in self.rows.iter().enumerate() {
            for (k, &w) in weights.iter().enumerate() {
                out[[m, start + k]] = w;
            }
        }
        out
    }

    pub fn apply(&self, spectrum: &[f32], out: &mut [f32]) {
        for ((start, weights), o) in self.rows.iter().zip(out.iter_mut()) {
            *o = weights
                .iter()
                .zip(&spectrum[*start..*start + weights.len()])
                .map(|(w, s)| w * s)
                .sum();
        }
    }

    /// Spreads band values back over the linear bins each band covers,
    /// weighting by filter response. Bins no band touches come out as zero.
    pub fn spread(&self, bands: &[f32], out: &mut [f32]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for ((start, weights), &b) in self.rows.iter().zip(bands) {
            for (k, &w) in weights.iter().enumerate() {
                out[start + k] += w * b;
            }
        }
        for (o, &c) in out.iter_mut().zip(&self.column_sums) {
            *o = if c > 0.0 { *o / c } else { 0.0 };
        }
    }
}

fn reflect_pad(x: &[f32], left: usize, right: usize) -> Vec<f32> {
    let n = x.len();
    let mut out = Vec::with_capacity(left + n + right);
    out.extend((0..left).map(|j| x[left - j]));
    out.extend_from_slice(x);
    out.extend((0..right).map(|j| x[n - 2 - j]));
    out
}

/// Log-mel analysis. Frames are centered on multiples of the hop with
/// reflected padding, so there are `ceil(len / hop)` of them.
pub fn wav_to_mel(w: &Waveform, cfg: &StftConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if w.sample_rate() != cfg.sample_rate {
        return Err(DspError::RateMismatch {
            expected: cfg.sample_rate,
            found: w.sample_rate(),
        });
    }
    if w.is_empty() {
        return Err(DspError::EmptySignal);
    }
    if w.len() < cfg.fft_size {
        return Err(DspError::TooShort {
            len: w.len(),
            frame: cfg.fft_size,
        });
    }
    let stft = Stft::new(cfg);
    let bank = MelFilterbank::new(cfg);
    let frames = cfg.frames_for(w.len());
    let half = cfg.fft_size / 2;
    let right = stft.span(frames) - half - w.len();
    let padded = reflect_pad(w.samples(), half, right);
    let mags = stft.magnitudes(&padded, frames);
    Ok(log_mel_from_magnitudes(&mags, &bank, &stft, cfg))
}

pub(crate) fn log_mel_from_magnitudes(
    mags: &Array2<f32>,
    bank: &MelFilterbank,
    stft: &Stft,
    cfg: &StftConfig,
) -> MelSpectrogram {
    let frames = mags.nrows();
    let scale = stft.amplitude_scale();
    let mut data = Array2::<f32>::zeros((cfg.mel_bins, frames));
    let mut bands = vec![0.0f32; cfg.mel_bins];
    for (i, row) in mags.outer_iter().enumerate() {
        bank.apply(row.as_slice().expect("standard layout"), &mut bands);
        for (m, &b) in bands.iter().enumerate() {
            data[[m, i]] = cfg.compress(b * scale);
        }
    }
    MelSpectrogram::new(data, cfg.clone()).expect("finite by construction")
}
