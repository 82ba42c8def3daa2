use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::ops::Scalar;
use super::{cfg_combine, CfgScale, GeneratorError, Logits, MaskSchedule, Model, Result};
use crate::codec::TokenGrid;
use crate::conditioning::CondEmbedding;

/// Conditions available to guidance. A missing one contributes no term.
#[derive(Debug, Clone, Copy, Default)]
pub struct Conditions<'a> {
    pub text: Option<&'a CondEmbedding>,
    pub audio: Option<&'a CondEmbedding>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    pub grid: TokenGrid,
    /// Masked cells before the first step, then after each step.
    pub masked_counts: Vec<usize>,
    /// Step at which each cell was committed; `None` for cells fixed on input.
    pub committed_at: Vec<Option<usize>>,
}

impl DecodeOutcome {
    pub fn steps(&self) -> usize {
        self.masked_counts.len() - 1
    }
}

fn guided_logits<S: Scalar>(
    model: &Model<S>,
    grid: &TokenGrid,
    conds: Conditions,
    t: CfgScale,
) -> Result<Logits> {
    let uncond = model.forward(grid, None)?;
    if t.value() == 0.0 || (conds.text.is_none() && conds.audio.is_none()) {
        return Ok(uncond);
    }
    let text = conds.text.map(|c| model.forward(grid, Some(c))).transpose()?;
    let audio = conds.audio.map(|c| model.forward(grid, Some(c))).transpose()?;
    cfg_combine(&uncond, text.as_ref().unwrap_or(&uncond), audio.as_ref().unwrap_or(&uncond), t)
}

/// Samples one token from `row / temperature`; returns it with its
/// log-probability under that distribution. Temperature 0 takes the argmax.
fn sample(row: ndarray::ArrayView1<f64>, temperature: f64, rng: &mut ChaCha8Rng) -> (u32, f64) {
    let scaled: Vec<f64> = if temperature == 0.0 {
        row.to_vec()
    } else {
        row.iter().map(|v| v / temperature).collect()
    };
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scaled.iter().map(|v| (v - max).exp()).sum();
    let log_z = max + z.ln();
    let pick = if temperature == 0.0 {
        super::model::argmax(ndarray::ArrayView1::from(&scaled))
    } else {
        let mut u = rng.random::<f64>() * z;
        let mut pick = scaled.len() - 1;
        for (i, v) in scaled.iter().enumerate() {
            u -= (v - max).exp();
            if u < 0.0 {
                pick = i;
                break;
            }
        }
        pick
    };
    (pick as u32, scaled[pick] - log_z)
}

fn gumbel(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// Fills every masked cell of `init` over `schedule.total_iters` steps.
///
/// After step `s`, exactly `ceil(ratio(s) · M₀)` cells remain masked. Each
/// step samples a token per masked cell and commits the most confident ones;
/// ties go to the lower cell index. Unmasked input cells never change.
pub fn iterative_decode<S: Scalar>(
    model: &Model<S>,
    init: &TokenGrid,
    conds: Conditions,
    t: CfgScale,
    schedule: &MaskSchedule,
    seed: u64,
) -> Result<DecodeOutcome> {
    schedule.validate()?;
    let cfg = model.config();
    cfg.check_grid(init)?;
    for c in [conds.text, conds.audio].into_iter().flatten() {
        cfg.check_cond(c)?;
    }
    let m0 = init.masked_count();
    let mut grid = init.clone();
    let mut committed_at = vec![None; grid.len()];
    let mut counts = vec![m0];
    if m0 == 0 {
        return Ok(DecodeOutcome { grid, masked_counts: counts, committed_at });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = schedule.total_iters;
    for step in 0..total {
        let remaining = grid.masked_count();
        let target = schedule.masked_after(step + 1, m0)?;
        if target > remaining {
            return Err(GeneratorError::Schedule(format!(
                "step {step} targets {target} masked cells with only {remaining} left"
            )));
        }
        let commit = remaining - target;
        if commit > 0 {
            let logits = guided_logits(model, &grid, conds, t)?;
            let noise = cfg.choice_temperature * (1.0 - (step + 1) as f64 / total as f64);
            let mut ranked: Vec<(f64, usize, u32)> = logits
                .cells()
                .iter()
                .enumerate()
                .map(|(r, &cell)| {
                    let (tok, logp) = sample(logits.row(r), cfg.temperature, &mut rng);
                    (logp + noise * gumbel(&mut rng), cell, tok)
                })
                .collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, cell, tok) in &ranked[..commit] {
                grid.set(cell, tok);
                committed_at[cell] = Some(step);
            }
        }
        counts.push(grid.masked_count());
    }
    debug_assert!(grid.is_complete());
    Ok(DecodeOutcome { grid, masked_counts: counts, committed_at })
}
