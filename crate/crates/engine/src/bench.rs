//! Throughput of parallel channel generation against the playback clock.

use std::time::Instant;

use octaloop_core::streamer::{outpaint_step, segment_seed, Pipeline};
use serde::{Deserialize, Serialize};

use crate::artifacts::{audio_condition, channel_states};
use crate::config::EngineConfig;
use crate::error::{EngineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub channels: usize,
    pub segments_per_channel: usize,
    pub threads_available: usize,
    pub model: String,
    pub new_seconds_per_segment: f64,
    pub wall_seconds: f64,
    pub cold_segment_ms_mean: f64,
    pub steady_segment_ms_mean: f64,
    pub steady_segment_ms_max: f64,
    /// Seconds of new audio per second of generation, steady-state segments
    /// only, for the slowest channel. At least 1.0 keeps up with playback.
    pub real_time_factor: f64,
    /// Every emitted sample of one channel over the whole wall time.
    pub overall_real_time_factor: f64,
}

/// Runs `segments` outpainting steps on each of `channels` channels, one
/// thread per channel, all at once.
pub fn bench(pipe: &Pipeline, cfg: &EngineConfig, channels: usize, segments: usize) -> Result<BenchReport> {
    if segments < 2 || channels == 0 {
        return Err(EngineError::Config("bench needs at least 1 channel and 2 segments".into()));
    }
    let audio = audio_condition(cfg)?;
    let states = channel_states(cfg)?;
    let plan = &cfg.plan;
    let rate = cfg.stft.sample_rate as f64;
    let start = Instant::now();
    let results: Vec<Result<(Vec<f64>, usize)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..channels)
            .map(|c| {
                let mut ch = states[c % states.len()].clone();
                ch.channel_id = c;
                let audio = audio.as_ref();
                s.spawn(move || -> Result<(Vec<f64>, usize)> {
                    let mut times = Vec::with_capacity(segments);
                    let mut samples = 0;
                    for k in 0..segments {
                        let t0 = Instant::now();
                        let out = outpaint_step(&mut ch, pipe, audio, plan, segment_seed(cfg.master_seed, c, k as u64))?;
                        times.push(t0.elapsed().as_secs_f64());
                        samples += out.audio.len();
                    }
                    Ok((times, samples))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().map_err(|_| EngineError::Service("bench worker panicked".into()))?).collect()
    });
    let wall = start.elapsed().as_secs_f64();
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;

    let new_secs = plan.new_samples(&cfg.stft) as f64 / rate;
    let cold: Vec<f64> = runs.iter().map(|(t, _)| t[0]).collect();
    let steady: Vec<f64> = runs.iter().flat_map(|(t, _)| t[1..].iter().copied()).collect();
    let slowest = runs.iter().map(|(t, _)| t[1..].iter().sum::<f64>()).fold(0.0, f64::max);
    let samples = runs.iter().map(|r| r.1).min().unwrap_or(0);
    let g = pipe.generator.config();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(BenchReport {
        channels,
        segments_per_channel: segments,
        threads_available: std::thread::available_parallelism().map_or(1, |n| n.get()),
        model: format!(
            "{} blocks, dim {}, {} heads, {}x{} grid, {} decode iterations, {} Griffin-Lim iterations",
            g.blocks, g.dim, g.heads, g.freq, g.time, g.decode_iters, cfg.decode.griffin_lim_iters
        ),
        new_seconds_per_segment: new_secs,
        wall_seconds: wall,
        cold_segment_ms_mean: 1e3 * mean(&cold),
        steady_segment_ms_mean: 1e3 * mean(&steady),
        steady_segment_ms_max: 1e3 * steady.iter().cloned().fold(0.0, f64::max),
        real_time_factor: new_secs * (segments - 1) as f64 / slowest,
        overall_real_time_factor: samples as f64 / rate / wall,
    })
}
