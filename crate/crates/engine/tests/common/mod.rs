#![allow(dead_code)]

pub mod schema;

use std::path::Path;

use octaloop_core::generator::CfgScale;
use octaloop_core::streamer::Pipeline;
use octaloop_engine::artifacts;
use octaloop_engine::config::{ClockKind, SinkKind};
use octaloop_engine::EngineConfig;

/// Default config shrunk so a segment takes milliseconds: 32 mel bins
/// (2 token rows), 12 columns, a one-block 16-wide model, 16 codewords.
pub fn tiny_config(dir: &Path) -> EngineConfig {
    let mut cfg = EngineConfig::default_config();
    cfg.set_base_dir(dir);
    cfg.stft.mel_bins = 32;
    let g = &mut cfg.generator;
    g.blocks = 1;
    g.dim = 16;
    g.heads = 2;
    g.codebook_size = 16;
    g.freq = 2;
    g.time = 12;
    g.decode_iters = 4;
    cfg.codec.codebook_size = 16;
    cfg.codec.kmeans_iters = 10;
    cfg.plan.segment_columns = 12;
    cfg.plan.overlap_columns = 6;
    cfg.decode.griffin_lim_iters = 2;
    cfg.train.epochs = 2;
    cfg.corpus.clips = 4;
    cfg.corpus.seconds = 3.0;
    cfg.stream.clock = ClockKind::Virtual;
    cfg.stream.virtual_latency_ms = 100.0;
    cfg.sink.kind = SinkKind::Null;
    cfg.validate().unwrap();
    cfg
}

/// Writes `cfg` as `octaloop.toml` in its base directory.
pub fn write_config(cfg: &EngineConfig) -> std::path::PathBuf {
    let p = cfg.base_dir().join("octaloop.toml");
    cfg.save(&p).unwrap();
    p
}

/// Synthesizes the corpus and trains both checkpoints through the library.
pub fn train(cfg: &EngineConfig) {
    let clips = artifacts::ensure_corpus(cfg).unwrap();
    let (cb, _) = artifacts::fit_codec(cfg, &clips).unwrap();
    artifacts::save_codec(cfg, &cb).unwrap();
    let examples = artifacts::training_examples(cfg, &clips, &cb).unwrap();
    let (g, _) = artifacts::fit_generator(cfg, &examples, &cb).unwrap();
    artifacts::save_generator(cfg, &g).unwrap();
}

pub fn trained_pipeline(cfg: &EngineConfig) -> Pipeline {
    train(cfg);
    artifacts::load_pipeline(cfg).unwrap()
}

pub fn scale(t: f64) -> CfgScale {
    CfgScale::new(t).unwrap()
}
