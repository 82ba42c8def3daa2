use super::{DspError, Result, Waveform};

/// Zero crossings of the interpolation kernel on each side, at the input rate.
const HALF_TAPS: usize = 32;
const ROLLOFF: f64 = 0.94;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn blackman(pos: f64, half_width: f64) -> f64 {
    // pos in [-half_width, half_width]
    let x = (pos / half_width + 1.0) * 0.5;
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    let tau = 2.0 * std::f64::consts::PI;
    0.42 - 0.5 * (tau * x).cos() + 0.08 * (2.0 * tau * x).cos()
}

/// Rational-ratio windowed-sinc resampler.
///
/// Output length is `round(len * target / source)`. Same-rate input is
/// returned unchanged.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(DspError::InvalidRate(target_rate));
    }
    if w.is_empty() {
        return Err(DspError::EmptySignal);
    }
    let source_rate = w.sample_rate();
    if source_rate == target_rate {
        return Ok(w.clone());
    }

    let g = gcd(source_rate as u64, target_rate as u64);
    let up = (target_rate as u64 / g) as usize; // output step denominator
    let down = (source_rate as u64 / g) as usize;
    let ratio = target_rate as f64 / source_rate as f64;
    let cutoff = ratio.min(1.0) * ROLLOFF; // relative to input Nyquist
    let half_width = (HALF_TAPS as f64 / ratio.min(1.0)).ceil();
    let taps = 2 * half_width as usize;

    // kernel[phase][j] weights input sample floor(t) - half_width + 1 + j
    let kernel: Vec<Vec<f32>> = (0..up)
        .map(|phase| {
            let frac = phase as f64 / up as f64;
            (0..taps)
                .map(|j| {
                    let offset = frac - (j as f64 - half_width + 1.0);
                    (cutoff * sinc(cutoff * offset) * blackman(offset, half_width)) as f32
                })
                .collect()
        })
        .collect();

    let x = w.samples();
    let n_in = x.len() as u64;
    let out_len = ((n_in * target_rate as u64 + source_rate as u64 / 2) / source_rate as u64) as usize;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let pos = n as u64 * down as u64;
        let base = (pos / up as u64) as i64;
        let phase = (pos % up as u64) as usize;
        let first = base - half_width as i64 + 1;
        let mut acc = 0.0f32;
        for (j, &k) in kernel[phase].iter().enumerate() {
            let idx = first + j as i64;
            if idx >= 0 && (idx as u64) < n_in {
                acc += k * x[idx as usize];
            }
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}
