use std::io::Write;
use std::path::Path;

use rand::prelude::*;
use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{backward, forward_full, masked_cross_entropy, Input, Weights};
use super::ops::Scalar;
use super::{GeneratorError, Model, Result};
use crate::codec::TokenGrid;
use crate::conditioning::CondEmbedding;

/// One complete grid with the conditions that describe it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub grid: TokenGrid,
    pub text: Option<CondEmbedding>,
    pub audio: Option<CondEmbedding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Probability of training a step against the null condition.
    pub cond_dropout: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 4, learning_rate: 2e-3, cond_dropout: 0.1, grad_clip: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondChoice {
    Null,
    Text,
    Audio,
}

/// Which cells to hide and which condition to show for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub masked: Vec<usize>,
    pub cond: CondChoice,
}

/// Draws `ceil(cos(π/2·u)·N)` cells with `u ~ U[0, 1)`, at least one, and
/// drops the condition with probability `dropout`; otherwise picks one of the
/// example's conditions uniformly.
pub fn plan_step<R: Rng>(rng: &mut R, example: &TrainExample, dropout: f64) -> StepPlan {
    let n = example.grid.len();
    let u: f64 = rng.random();
    let count = ((std::f64::consts::FRAC_PI_2 * u).cos() * n as f64).ceil() as usize;
    let mut masked = index::sample(rng, n, count.clamp(1, n)).into_vec();
    masked.sort_unstable();
    let cond = if rng.random::<f64>() < dropout {
        CondChoice::Null
    } else {
        let options: Vec<CondChoice> = [
            example.text.as_ref().map(|_| CondChoice::Text),
            example.audio.as_ref().map(|_| CondChoice::Audio),
        ]
        .into_iter()
        .flatten()
        .collect();
        options.choose(rng).copied().unwrap_or(CondChoice::Null)
    };
    StepPlan { masked, cond }
}

/// One row of the loss trace. Row 0 is measured before any update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub masked_accuracy: f64,
    pub uncond_fraction: f64,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str = "epoch,loss,masked_accuracy,uncond_fraction";

    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.6},{:.6}", self.epoch, self.loss, self.masked_accuracy, self.uncond_fraction)
    }

    pub fn write_csv(path: impl AsRef<Path>, rows: &[EpochStats]) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{}", Self::CSV_HEADER)?;
        for r in rows {
            writeln!(f, "{}", r.csv_row())?;
        }
        f.flush()
    }
}

#[derive(Default)]
struct Tally {
    loss: f64,
    correct: usize,
    cells: usize,
    steps: usize,
    uncond: usize,
}

impl Tally {
    fn stats(&self, epoch: usize) -> EpochStats {
        EpochStats {
            epoch,
            loss: self.loss / self.cells.max(1) as f64,
            masked_accuracy: self.correct as f64 / self.cells.max(1) as f64,
            uncond_fraction: self.uncond as f64 / self.steps.max(1) as f64,
        }
    }
}

fn check_corpus<S: Scalar>(model: &Model<S>, corpus: &[TrainExample]) -> Result<()> {
    if corpus.is_empty() {
        return Err(GeneratorError::EmptyCorpus);
    }
    for ex in corpus {
        model.config.check_grid(&ex.grid)?;
        if !ex.grid.is_complete() {
            return Err(GeneratorError::ShapeMismatch("training grids must be fully unmasked".into()));
        }
        for c in [&ex.text, &ex.audio].into_iter().flatten() {
            model.config.check_cond(c)?;
        }
    }
    Ok(())
}

fn masked_input<S: Scalar>(model: &Model<S>, ex: &TrainExample, plan: &StepPlan) -> (Input<S>, Vec<u32>) {
    let mut grid = ex.grid.clone();
    let targets = plan.masked.iter().map(|&c| ex.grid.indices()[c]).collect();
    for &c in &plan.masked {
        grid.mask_cell(c);
    }
    let cond = match plan.cond {
        CondChoice::Null => None,
        CondChoice::Text => ex.text.as_ref(),
        CondChoice::Audio => ex.audio.as_ref(),
    };
    (Input::new(&model.config, &grid, cond), targets)
}

/// Loss and accuracy over one randomly masked pass of `corpus`, no update.
pub fn evaluate<S: Scalar>(model: &Model<S>, corpus: &[TrainExample], dropout: f64, seed: u64) -> Result<EpochStats> {
    check_corpus(model, corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::default();
    for ex in corpus {
        let plan = plan_step(&mut rng, ex, dropout);
        let (input, targets) = masked_input(model, ex, &plan);
        let (logits, _) = forward_full(&model.config, &model.weights, &input);
        let (loss, correct, _) = masked_cross_entropy(logits.view(), &plan.masked, &targets, S::one());
        tally.loss += loss;
        tally.correct += correct;
        tally.cells += plan.masked.len();
        tally.steps += 1;
        tally.uncond += usize::from(plan.cond == CondChoice::Null);
    }
    Ok(tally.stats(0))
}

struct Adam<S> {
    m: Weights<S>,
    v: Weights<S>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, w: &mut Weights<S>, g: &Weights<S>, lr: f64, clip: f64) {
        self.t += 1;
        let norm = g
            .views()
            .iter()
            .flat_map(|(_, v)| v.iter().map(|x| x.to_f64().unwrap_or(0.0).powi(2)).collect::<Vec<_>>())
            .sum::<f64>()
            .sqrt();
        let factor = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let (b1, b2, eps, f) = (S::lit(Self::B1), S::lit(Self::B2), S::lit(Self::EPS), S::lit(factor));
        let (lr1, c2) = (S::lit(lr / c1), S::lit(c2));
        let grads = g.views();
        for (((mut wt, (_, gt)), mut mt), mut vt) in
            w.views_mut().into_iter().zip(grads).zip(self.m.views_mut()).zip(self.v.views_mut())
        {
            ndarray::Zip::from(&mut wt).and(&gt).and(&mut mt).and(&mut vt).for_each(|w, &g, m, v| {
                let g = g * f;
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                *w = *w - lr1 * *m / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Masked-token training with condition dropout. Returns `epochs + 1` rows:
/// row 0 before any update, then one per epoch.
pub fn train_masked<S: Scalar>(
    model: &mut Model<S>,
    corpus: &[TrainExample],
    params: &TrainParams,
) -> Result<Vec<EpochStats>> {
    check_corpus(model, corpus)?;
    if params.batch_size == 0 || !(params.learning_rate > 0.0) || !(0.0..=1.0).contains(&params.cond_dropout) {
        return Err(GeneratorError::Config("batch_size, learning_rate or cond_dropout out of range".into()));
    }
    let mut trace = vec![evaluate(model, corpus, params.cond_dropout, params.seed ^ 0xE7A1)?];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut adam = Adam { m: Weights::zeros(&model.config), v: Weights::zeros(&model.config), t: 0 };
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 1..=params.epochs {
        order.shuffle(&mut rng);
        let mut tally = Tally::default();
        for batch in order.chunks(params.batch_size) {
            let plans: Vec<StepPlan> = batch.iter().map(|&i| plan_step(&mut rng, &corpus[i], params.cond_dropout)).collect();
            let total: usize = plans.iter().map(|p| p.masked.len()).sum();
            let weight = S::lit(1.0 / total as f64);
            let mut grads = Weights::zeros(&model.config);
            for (&i, plan) in batch.iter().zip(&plans) {
                let (input, targets) = masked_input(model, &corpus[i], plan);
                let (logits, cache) = forward_full(&model.config, &model.weights, &input);
                let (loss, correct, dlogits) = masked_cross_entropy(logits.view(), &plan.masked, &targets, weight);
                backward(&model.config, &model.weights, &mut grads, &input, &cache, dlogits.view());
                tally.loss += loss;
                tally.correct += correct;
                tally.cells += plan.masked.len();
                tally.steps += 1;
                tally.uncond += usize::from(plan.cond == CondChoice::Null);
            }
            adam.step(&mut model.weights, &grads, params.learning_rate, params.grad_clip);
        }
        trace.push(tally.stats(epoch));
    }
    Ok(trace)
}
