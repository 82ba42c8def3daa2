//! Finite-difference check of the hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{backward, forward_full, masked_cross_entropy, Input, Weights};
use super::{GeneratorConfig, Result};
use crate::codec::TokenGrid;
use crate::conditioning::CondEmbedding;

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub parameters: usize,
    pub max_relative_error: f64,
    /// Tensor and flat offset of the worst entry.
    pub worst: (String, usize),
}

fn loss_of(c: &GeneratorConfig, w: &Weights<f64>, input: &Input<f64>, cells: &[usize], t: &[u32]) -> f64 {
    let (logits, _) = forward_full(c, w, input);
    masked_cross_entropy(logits.view(), cells, t, 1.0).0
}

/// Compares analytic gradients of the masked loss with central differences
/// over every parameter, in `f64`. Weights are initialized from `config`
/// and then jittered so no gain is exactly one and no bias exactly zero.
/// Every other cell of a random grid is masked.
///
/// Cost is two forward passes per parameter; keep the config tiny.
pub fn gradient_check(config: &GeneratorConfig, cond: Option<&CondEmbedding>, seed: u64) -> Result<GradientReport> {
    config.validate()?;
    if let Some(e) = cond {
        config.check_cond(e)?;
    }
    let c = config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Weights::<f64>::init(c);
    for mut t in w.views_mut() {
        t.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
    let all: Vec<u32> = (0..c.cells()).map(|_| rng.random_range(0..c.codebook_size as u32)).collect();
    let mut grid = TokenGrid::from_indices(c.freq, c.time, all.clone()).expect("shape from config");
    (0..c.cells()).step_by(2).for_each(|i| grid.mask_cell(i));
    let cells = grid.masked_cells();
    let targets: Vec<u32> = cells.iter().map(|&i| all[i]).collect();

    let input = Input::<f64>::new(c, &grid, cond);
    let (logits, cache) = forward_full(c, &w, &input);
    let (_, _, dlogits) = masked_cross_entropy(logits.view(), &cells, &targets, 1.0);
    let mut grads = Weights::<f64>::zeros(c);
    backward(c, &w, &mut grads, &input, &cache, dlogits.view());
    let analytic: Vec<Vec<f64>> = grads.views().iter().map(|(_, v)| v.iter().cloned().collect()).collect();

    let h = 1e-5;
    let mut report = GradientReport { parameters: 0, max_relative_error: 0.0, worst: (String::new(), 0) };
    for (ti, name) in w.names().into_iter().enumerate() {
        for (j, &an) in analytic[ti].iter().enumerate() {
            let bump = |delta: f64| {
                let mut wp = w.clone();
                let mut views = wp.views_mut();
                *views[ti].iter_mut().nth(j).expect("index within tensor") += delta;
                drop(views);
                loss_of(c, &wp, &input, &cells, &targets)
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = (name.clone(), j);
            }
            report.parameters += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::Modality;

    fn tiny(blocks: usize, freq: usize, time: usize) -> GeneratorConfig {
        GeneratorConfig {
            blocks,
            dim: 8,
            heads: 2,
            codebook_size: 5,
            freq,
            time,
            cond_dim: 3,
            mlp_ratio: 2,
            seed: 11,
            ..GeneratorConfig::toy()
        }
    }

    fn check(c: &GeneratorConfig, cond: Option<CondEmbedding>) {
        let r = gradient_check(c, cond.as_ref(), 99).unwrap();
        assert_eq!(r.parameters, c.parameter_count());
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn two_cell_linear_model() {
        let c = tiny(0, 1, 2);
        check(&c, None);
        check(&c, Some(CondEmbedding { vector: vec![0.6, -0.8, 0.0], modality: Modality::Text }));
    }

    #[test]
    fn one_block() {
        let c = tiny(1, 2, 3);
        check(&c, None);
        check(&c, Some(CondEmbedding { vector: vec![0.0, 0.6, 0.8], modality: Modality::Audio }));
    }

    #[test]
    fn wrong_condition_width_is_an_error() {
        let c = tiny(0, 1, 2);
        let e = CondEmbedding { vector: vec![1.0], modality: Modality::Text };
        assert!(gradient_check(&c, Some(&e), 0).is_err());
    }
}
