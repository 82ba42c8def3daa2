#![allow(dead_code)]

use ndarray::Array2;
use octaloop_core::codec::Codebook;
use octaloop_core::dsp::{GriffinLim, StftConfig};
use octaloop_core::generator::{Generator, GeneratorConfig, MaskSchedule};
use octaloop_core::streamer::{OutpaintPlan, Pipeline};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// 48 kHz analysis with 32 mel bands, so grids are 2 rows high.
pub fn small_stft() -> StftConfig {
    StftConfig { mel_bins: 32, ..StftConfig::studio_48k() }
}

/// 8 columns per segment (~1.33 s), 4 carried over, 50 ms seams.
pub fn small_plan() -> OutpaintPlan {
    OutpaintPlan { segment_columns: 8, overlap_columns: 4, crossfade_ms: 50.0, ..OutpaintPlan::default() }
}

pub fn small_generator(seed: u64) -> Generator {
    Generator::new(GeneratorConfig {
        blocks: 1,
        dim: 16,
        heads: 2,
        codebook_size: 16,
        freq: 2,
        time: 8,
        decode_iters: 4,
        seed,
        ..GeneratorConfig::toy()
    })
    .unwrap()
}

/// Smooth random codewords in the log-mel range.
pub fn random_codebook(k: usize, seed: u64) -> Codebook {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = Array2::from_shape_simple_fn((k, 256), || rng.random_range(0.0f32..4.0));
    Codebook::new(entries, seed).unwrap()
}

pub fn small_pipeline(seed: u64) -> Pipeline {
    Pipeline::new(
        small_generator(seed),
        random_codebook(16, seed),
        small_stft(),
        Box::new(GriffinLim { iterations: 2 }),
        MaskSchedule::cosine(4),
    )
    .unwrap()
}

/// Largest `|x[i+1] - x[i]|` over `[lo, hi)`.
pub fn max_step(x: &[f32], lo: usize, hi: usize) -> f32 {
    (lo.max(1)..hi.min(x.len())).map(|i| (x[i] - x[i - 1]).abs()).fold(0.0, f32::max)
}

/// 99th percentile of `|x[i+1] - x[i]|`, skipping the given sample ranges.
pub fn step_percentile_99(x: &[f32], skip: &[(usize, usize)]) -> f32 {
    let mut d: Vec<f32> = (1..x.len())
        .filter(|&i| !skip.iter().any(|&(a, b)| (a..b).contains(&i)))
        .map(|i| (x[i] - x[i - 1]).abs())
        .collect();
    d.sort_by(f32::total_cmp);
    d[(d.len() as f64 * 0.99) as usize]
}
