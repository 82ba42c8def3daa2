//! Browser bindings for three small explorers: the decode schedule, the
//! guidance combination and the patch tokenizer.

use ndarray::Array2;
use octaloop_core::codec::{patchify, train_codebook, vq_decode, vq_encode, TokenGrid};
use octaloop_core::dsp::{wav_to_mel, StftConfig, Waveform};
use octaloop_core::generator::{cfg_combine, CfgScale, Logits, MaskSchedule, ScheduleKind};
use wasm_bindgen::prelude::*;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn kind_from(name: &str) -> Result<ScheduleKind, String> {
    match name {
        "cosine" => Ok(ScheduleKind::Cosine),
        "linear" => Ok(ScheduleKind::Linear),
        other => Err(format!("unknown schedule {other:?}")),
    }
}

/// Masked cells left after steps `0..=iters`.
pub fn schedule_counts(kind: &str, iters: usize, cells: usize) -> Result<Vec<u32>, String> {
    let s = MaskSchedule { kind: kind_from(kind)?, total_iters: iters };
    (0..=iters)
        .map(|i| s.masked_after(i, cells).map(|n| n as u32).map_err(|e| e.to_string()))
        .collect()
}

#[wasm_bindgen(js_name = maskedCounts)]
pub fn masked_counts(kind: &str, iters: usize, cells: usize) -> Result<Vec<u32>, JsError> {
    schedule_counts(kind, iters, cells).map_err(js)
}

fn row(values: &[f64]) -> Result<Logits, String> {
    let a = Array2::from_shape_vec((1, values.len()), values.to_vec()).map_err(|e| e.to_string())?;
    Logits::new(vec![0], a).map_err(|e| e.to_string())
}

/// Guided logits for one cell, followed by their softmax (length `2K`).
pub fn guided_row(uncond: &[f64], text: &[f64], audio: &[f64], t: f64) -> Result<Vec<f64>, String> {
    let t = CfgScale::new(t).map_err(|e| e.to_string())?;
    let out = cfg_combine(&row(uncond)?, &row(text)?, &row(audio)?, t).map_err(|e| e.to_string())?;
    let logits: Vec<f64> = out.row(0).to_vec();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    Ok(logits.iter().copied().chain(exp.iter().map(|e| e / z)).collect())
}

#[wasm_bindgen(js_name = guide)]
pub fn guide(uncond: &[f64], text: &[f64], audio: &[f64], t: f64) -> Result<Vec<f64>, JsError> {
    guided_row(uncond, text, audio, t).map_err(js)
}

/// Demo geometry: the 48 kHz front end narrowed to 64 mel bins.
pub fn demo_stft() -> StftConfig {
    StftConfig { mel_bins: 64, ..StftConfig::studio_48k() }
}

#[wasm_bindgen]
pub struct Tokenized {
    mel_bins: usize,
    frames: usize,
    grid_freq: usize,
    grid_time: usize,
    mel: Vec<f32>,
    recon: Vec<f32>,
    tokens: Vec<u32>,
    used: usize,
}

#[wasm_bindgen]
impl Tokenized {
    #[wasm_bindgen(getter, js_name = melBins)]
    pub fn mel_bins(&self) -> usize {
        self.mel_bins
    }
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }
    #[wasm_bindgen(getter, js_name = gridFreq)]
    pub fn grid_freq(&self) -> usize {
        self.grid_freq
    }
    #[wasm_bindgen(getter, js_name = gridTime)]
    pub fn grid_time(&self) -> usize {
        self.grid_time
    }
    /// Row-major `mel_bins × frames`.
    #[wasm_bindgen(getter)]
    pub fn mel(&self) -> Vec<f32> {
        self.mel.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn recon(&self) -> Vec<f32> {
        self.recon.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn tokens(&self) -> Vec<u32> {
        self.tokens.clone()
    }
    /// Distinct codewords the grid uses.
    #[wasm_bindgen(getter)]
    pub fn used(&self) -> usize {
        self.used
    }
    #[wasm_bindgen(getter)]
    pub fn mse(&self) -> f64 {
        let n = self.mel.len().max(1) as f64;
        self.mel.iter().zip(&self.recon).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / n
    }
}

/// Fits a `k`-entry codebook on the clip's own patches and tokenizes it.
pub fn tokenize_clip(samples: &[f32], k: usize, seed: u32) -> Result<Tokenized, String> {
    let cfg = demo_stft();
    let w = Waveform::new(samples.to_vec(), cfg.sample_rate).map_err(|e| e.to_string())?;
    let mel = wav_to_mel(&w, &cfg).map_err(|e| e.to_string())?;
    let patches = patchify(&mel).map_err(|e| e.to_string())?;
    let (cb, _) = train_codebook(patches.data.view(), k, 15, seed as u64).map_err(|e| e.to_string())?;
    let grid: TokenGrid = vq_encode(&mel, &cb).map_err(|e| e.to_string())?;
    let recon = vq_decode(&grid, &cb, &cfg, Some(mel.frames())).map_err(|e| e.to_string())?;
    let mut seen = grid.indices().to_vec();
    seen.sort_unstable();
    seen.dedup();
    Ok(Tokenized {
        mel_bins: mel.mel_bins(),
        frames: mel.frames(),
        grid_freq: grid.freq(),
        grid_time: grid.time(),
        mel: mel.data().iter().copied().collect(),
        recon: recon.data().iter().copied().collect(),
        tokens: grid.indices().to_vec(),
        used: seen.len(),
    })
}

#[wasm_bindgen]
pub fn tokenize(samples: &[f32], k: usize, seed: u32) -> Result<Tokenized, JsError> {
    tokenize_clip(samples, k, seed).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_ends_fully_decoded() {
        let c = schedule_counts("cosine", 16, 960).unwrap();
        assert_eq!(c.len(), 17);
        assert_eq!((c[0], c[16]), (960, 0));
        assert!(c.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(schedule_counts("linear", 4, 8).unwrap(), vec![8, 6, 4, 2, 0]);
        assert!(schedule_counts("square", 4, 8).is_err());
    }

    #[test]
    fn guidance_row_and_softmax() {
        let u = [0.0, 1.0, 2.0];
        let out = guided_row(&u, &[1.0, 1.0, 2.0], &[0.0, 2.0, 2.0], 2.0).unwrap();
        assert_eq!(&out[..3], &[2.0, 3.0, 2.0]);
        assert!((out[3..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out[4] > out[3]);
        assert_eq!(&guided_row(&u, &[5.0; 3], &[7.0; 3], 0.0).unwrap()[..3], &u);
        assert!(guided_row(&u, &u, &u, -1.0).is_err());
        assert!(guided_row(&u, &u[..2], &u, 1.0).is_err());
    }

    #[test]
    fn tokenizer_round_trip_on_a_sweep() {
        let sr = 48_000.0;
        let s: Vec<f32> = (0..96_000)
            .map(|i| {
                let t = i as f32 / sr;
                (2.0 * std::f32::consts::PI * (200.0 * t + 900.0 * t * t)).sin() * 0.5
            })
            .collect();
        let out = tokenize_clip(&s, 8, 1).unwrap();
        assert_eq!(out.mel_bins(), 64);
        assert_eq!(out.frames(), 192);
        assert_eq!((out.grid_freq(), out.grid_time()), (4, 12));
        assert_eq!(out.tokens().len(), 48);
        assert!(out.used() >= 2 && out.used() <= 8);
        assert!(out.mse().is_finite());
        assert!(tokenize_clip(&s[..100], 8, 1).is_err());
    }
}
