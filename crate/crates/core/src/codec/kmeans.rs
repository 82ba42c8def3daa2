//! Lloyd k-means with k-means++ seeding, used to fit the patch codebook.

use std::collections::HashSet;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{Codebook, CodecError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub iters: usize,
    pub seed: u64,
    /// Independent k-means++ starts; the lowest final inertia wins.
    pub restarts: usize,
}

/// Restarts used by [`train_codebook`].
pub const DEFAULT_RESTARTS: usize = 8;

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Array2<f32>,
    pub assignments: Vec<u32>,
    /// Total squared error after each assignment pass; never increases.
    pub inertia: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f32>, b: ArrayView1<f32>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

const CHUNK: usize = 2048;

/// Exact nearest centroid for every row of `points` (squared Euclidean,
/// lowest index on ties) together with the distance.
///
/// Candidates come from the expanded `‖x‖² − 2x·c + ‖c‖²` form in f32 and
/// every centroid within a conservative error bound of the best one is
/// re-scored exactly in f64, so the result equals a brute-force scan.
pub fn nearest(points: ArrayView2<f32>, centroids: ArrayView2<f32>) -> (Vec<u32>, Vec<f64>) {
    let n = points.nrows();
    let c_norms: Vec<f32> = centroids.outer_iter().map(|c| c.dot(&c)).collect();
    let c_norm_max = c_norms.iter().cloned().fold(0.0f32, f32::max);
    let mut assign = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    let ct = centroids.t();
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let block = points.slice(s![start..end, ..]);
        let dots = block.dot(&ct);
        for (r, x) in block.outer_iter().enumerate() {
            let x_norm = x.dot(&x);
            let row = dots.row(r);
            let approx: Vec<f32> = row
                .iter()
                .zip(&c_norms)
                .map(|(&d, &cn)| x_norm - 2.0 * d + cn)
                .collect();
            let best = approx.iter().cloned().fold(f32::INFINITY, f32::min);
            let tol = 1e-4 * (x_norm + c_norm_max) + 1e-6;
            let mut best_idx = 0u32;
            let mut best_dist = f64::INFINITY;
            for (j, &a) in approx.iter().enumerate() {
                if a <= best + tol {
                    let d = sq_dist(x, centroids.row(j));
                    if d < best_dist {
                        best_dist = d;
                        best_idx = j as u32;
                    }
                }
            }
            assign.push(best_idx);
            dists.push(best_dist);
        }
    }
    (assign, dists)
}

fn distinct_rows(points: ArrayView2<f32>, limit: usize) -> usize {
    let mut seen = HashSet::new();
    for row in points.outer_iter() {
        seen.insert(row.iter().map(|v| v.to_bits()).collect::<Vec<u32>>());
        if seen.len() >= limit {
            break;
        }
    }
    seen.len()
}

fn plus_plus_init(points: ArrayView2<f32>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f32> {
    let n = points.nrows();
    let dim = points.ncols();
    let mut centroids = Array2::<f32>::zeros((k, dim));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut min_d: Vec<f64> = points
        .outer_iter()
        .map(|p| sq_dist(p, centroids.row(0)))
        .collect();
    // greedy variant: draw a few candidates per step, keep the one that
    // lowers the total potential most
    let trials = 2 + (k as f64).ln().floor() as usize;
    for c in 1..k {
        let dist = WeightedIndex::new(&min_d).ok();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let pick = match &dist {
                Some(d) => d.sample(rng),
                // every point coincides with a chosen centroid
                None => rng.random_range(0..n),
            };
            let cand = points.row(pick);
            let next: Vec<f64> = min_d
                .iter()
                .zip(points.outer_iter())
                .map(|(&d, p)| d.min(sq_dist(p, cand)))
                .collect();
            let pot: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|b| pot < b.0) {
                best = Some((pot, pick, next));
            }
        }
        let (_, pick, next) = best.expect("at least one trial");
        centroids.row_mut(c).assign(&points.row(pick));
        min_d = next;
    }
    centroids
}

/// Lloyd iterations from k-means++ starts. Deterministic for a given seed.
///
/// A centroid update is kept only when it lowers its cluster's error, and
/// empty clusters keep their previous centroid, so each run's inertia trace
/// is monotone.
pub fn kmeans(points: ArrayView2<f32>, params: &KMeansParams) -> Result<KMeans> {
    let k = params.k;
    if k == 0 {
        return Err(CodecError::Config("k must be positive".into()));
    }
    let found = distinct_rows(points, k);
    if found < k {
        return Err(CodecError::NotEnoughDistinct { needed: k, found });
    }
    let mut best: Option<KMeans> = None;
    for r in 0..params.restarts.max(1) as u64 {
        let seed = params.seed.wrapping_add(r.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let run = lloyd(points, k, params.iters, seed);
        let better = match &best {
            Some(b) => run.inertia.last() < b.inertia.last(),
            None => true,
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one run"))
}

fn lloyd(points: ArrayView2<f32>, k: usize, iters: usize, seed: u64) -> KMeans {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let (mut assignments, dists) = nearest(points, centroids.view());
    let mut inertia = vec![dists.iter().sum::<f64>()];

    for _ in 0..iters {
        let dim = points.ncols();
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (p, &a) in points.outer_iter().zip(&assignments) {
            let mut row = sums.row_mut(a as usize);
            row.zip_mut_with(&p, |s, &v| *s += v as f64);
            counts[a as usize] += 1;
        }
        let mut old_err = vec![0.0f64; k];
        let mut new_err = vec![0.0f64; k];
        let proposed: Array2<f32> = Array2::from_shape_fn((k, dim), |(c, j)| {
            if counts[c] == 0 {
                centroids[[c, j]]
            } else {
                (sums[[c, j]] / counts[c] as f64) as f32
            }
        });
        for (p, &a) in points.outer_iter().zip(&assignments) {
            let a = a as usize;
            old_err[a] += sq_dist(p, centroids.row(a));
            new_err[a] += sq_dist(p, proposed.row(a));
        }
        for c in 0..k {
            if new_err[c] < old_err[c] {
                centroids.row_mut(c).assign(&proposed.row(c));
            }
        }
        let (next, dists) = nearest(points, centroids.view());
        inertia.push(dists.iter().sum());
        let converged = next == assignments;
        assignments = next;
        if converged {
            break;
        }
    }
    KMeans {
        centroids,
        assignments,
        inertia,
    }
}

/// Fits a `K`-entry codebook to flattened patches (one per row).
pub fn train_codebook(patches: ArrayView2<f32>, k: usize, iters: usize, seed: u64) -> Result<(Codebook, KMeans)> {
    if k < 2 {
        return Err(CodecError::InvalidCodebook(format!("K = {k}, need at least 2")));
    }
    let fit = kmeans(
        patches,
        &KMeansParams {
            k,
            iters,
            seed,
            restarts: DEFAULT_RESTARTS,
        },
    )?;
    let codebook = Codebook::new(fit.centroids.clone(), seed)?;
    Ok((codebook, fit))
}
