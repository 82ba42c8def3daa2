//! Training, loading and wiring of the codec and generator checkpoints.

use ndarray::{s, Array2, Axis};
use octaloop_core::codec::{patchify, read_codebook, train_codebook, vq_encode, write_codebook, Codebook};
use octaloop_core::conditioning::{embed_audio_dim, embed_text_dim, CondEmbedding};
use octaloop_core::dsp::wav::read_wav;
use octaloop_core::dsp::{resample, wav_to_mel, GriffinLim, MelSpectrogram, Waveform};
use octaloop_core::generator::{
    read_generator, train_masked, write_generator, EpochStats, Generator, TrainExample,
};
use octaloop_core::streamer::{ChannelState, Pipeline};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{AudioMode, EngineConfig};
use crate::corpus::{read_corpus, synth_corpus, write_corpus, Clip};
use crate::error::{EngineError, Result};

/// Reads the corpus directory, synthesizing and writing it first if absent.
pub fn ensure_corpus(cfg: &EngineConfig) -> Result<Vec<Clip>> {
    let dir = cfg.corpus_dir();
    if dir.join(crate::corpus::MANIFEST_FILE).exists() {
        return read_corpus(&dir);
    }
    let clips = synth_corpus(&cfg.corpus, cfg.master_seed, cfg.stft.sample_rate)?;
    write_corpus(&dir, &clips, cfg.master_seed)?;
    Ok(clips)
}

fn at_rate(w: &Waveform, rate: u32) -> Result<Waveform> {
    Ok(if w.sample_rate() == rate { w.clone() } else { resample(w, rate)? })
}

pub fn clip_mel(cfg: &EngineConfig, clip: &Clip) -> Result<MelSpectrogram> {
    Ok(wav_to_mel(&at_rate(&clip.wave, cfg.stft.sample_rate)?, &cfg.stft)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct CodecReport {
    pub clips: usize,
    pub patches: usize,
    pub fitted_on: usize,
    pub codebook_size: usize,
    pub inertia_first: f64,
    pub inertia_last: f64,
    pub content_hash: String,
}

/// Fits the codebook on (a seeded sample of) every corpus patch.
pub fn fit_codec(cfg: &EngineConfig, clips: &[Clip]) -> Result<(Codebook, CodecReport)> {
    let mut rows = Vec::new();
    for clip in clips {
        rows.push(patchify(&clip_mel(cfg, clip)?)?.data);
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let all = ndarray::concatenate(Axis(0), &views).map_err(|e| EngineError::Config(format!("corpus patches: {e}")))?;
    let total = all.nrows();
    let cap = cfg.codec.max_patches;
    let data: Array2<f32> = if cap > 0 && total > cap {
        let mut idx: Vec<usize> = (0..total).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.master_seed ^ 0xC0DE));
        idx.truncate(cap);
        idx.sort_unstable();
        all.select(Axis(0), &idx)
    } else {
        all
    };
    let (cb, fit) = train_codebook(data.view(), cfg.codec.codebook_size, cfg.codec.kmeans_iters, cfg.master_seed)?;
    let report = CodecReport {
        clips: clips.len(),
        patches: total,
        fitted_on: data.nrows(),
        codebook_size: cb.len(),
        inertia_first: fit.inertia[0],
        inertia_last: *fit.inertia.last().expect("at least one pass"),
        content_hash: cb.content_hash(),
    };
    Ok((cb, report))
}

pub fn save_codec(cfg: &EngineConfig, cb: &Codebook) -> Result<()> {
    let dir = cfg.artifacts();
    std::fs::create_dir_all(&dir).map_err(EngineError::io(&dir))?;
    Ok(write_codebook(cfg.codebook_path(), cb)?)
}

pub fn load_codec(cfg: &EngineConfig) -> Result<Codebook> {
    let path = cfg.codebook_path();
    if !path.exists() {
        return Err(EngineError::MissingCheckpoint { path, verb: "train-codec" });
    }
    let cb = read_codebook(&path)?;
    if cb.len() != cfg.codec.codebook_size {
        return Err(EngineError::Config(format!(
            "{} holds {} codewords, config asks for {}",
            path.display(),
            cb.len(),
            cfg.codec.codebook_size
        )));
    }
    Ok(cb)
}

pub fn load_generator(cfg: &EngineConfig, cb: &Codebook) -> Result<Generator> {
    let path = cfg.generator_path();
    if !path.exists() {
        return Err(EngineError::MissingCheckpoint { path, verb: "train-model" });
    }
    let g = read_generator(&path, Some(&cb.content_hash()))?;
    if g.config() != &cfg.generator {
        return Err(EngineError::Config(format!("{} was trained with a different [generator] section", path.display())));
    }
    Ok(g)
}

/// Tokenizes every full `generator.time`-column window of every clip and
/// attaches the clip's label and audio embeddings.
pub fn training_examples(cfg: &EngineConfig, clips: &[Clip], cb: &Codebook) -> Result<Vec<TrainExample>> {
    let width = cfg.generator.time * octaloop_core::codec::PATCH;
    let dim = cfg.generator.cond_dim;
    let mut out = Vec::new();
    for clip in clips {
        let mel = clip_mel(cfg, clip)?;
        let text = embed_text_dim(&clip.entry.label, dim)?;
        let audio = if clip.wave.duration_secs() >= 1.0 { Some(embed_audio_dim(&clip.wave, dim)?) } else { None };
        for w in 0..mel.frames() / width {
            let window = mel.data().slice(s![.., w * width..(w + 1) * width]).to_owned();
            let grid = vq_encode(&MelSpectrogram::new(window, cfg.stft.clone())?, cb)?;
            out.push(TrainExample { grid, text: Some(text.clone()), audio: audio.clone() });
        }
    }
    if out.is_empty() {
        return Err(EngineError::Config(format!(
            "corpus clips are shorter than one segment ({} frames)",
            width
        )));
    }
    Ok(out)
}

pub fn fit_generator(cfg: &EngineConfig, examples: &[TrainExample], cb: &Codebook) -> Result<(Generator, Vec<EpochStats>)> {
    let mut g = Generator::new(cfg.generator.clone())?;
    g.set_codebook_hash(cb.content_hash());
    let trace = train_masked(&mut g, examples, &cfg.train)?;
    Ok((g, trace))
}

pub fn save_generator(cfg: &EngineConfig, g: &Generator) -> Result<()> {
    let dir = cfg.artifacts();
    std::fs::create_dir_all(&dir).map_err(EngineError::io(&dir))?;
    Ok(write_generator(cfg.generator_path(), g)?)
}

pub fn load_pipeline(cfg: &EngineConfig) -> Result<Pipeline> {
    let cb = load_codec(cfg)?;
    let g = load_generator(cfg, &cb)?;
    let vocoder = Box::new(GriffinLim { iterations: cfg.decode.griffin_lim_iters });
    Ok(Pipeline::new(g, cb, cfg.stft.clone(), vocoder, cfg.schedule())?)
}

/// The shared audio condition, if the config enables one.
pub fn audio_condition(cfg: &EngineConfig) -> Result<Option<CondEmbedding>> {
    match (&cfg.audio_mode, &cfg.audio_query) {
        (AudioMode::Shared, Some(p)) => {
            let path = cfg.resolve(p);
            if !path.exists() {
                return Err(EngineError::Config(format!("audio_query {} not found", path.display())));
            }
            let chans = read_wav(&path)?;
            let n = chans.len() as f32;
            let mono: Vec<f32> =
                (0..chans[0].len()).map(|i| chans.iter().map(|c| c.samples()[i]).sum::<f32>() / n).collect();
            let w = Waveform::new(mono, chans[0].sample_rate())?;
            Ok(Some(embed_audio_dim(&w, cfg.generator.cond_dim)?))
        }
        _ => Ok(None),
    }
}

pub fn channel_states(cfg: &EngineConfig) -> Result<Vec<ChannelState>> {
    cfg.channels
        .iter()
        .enumerate()
        .map(|(i, c)| Ok(ChannelState::with_embedding_dim(i, &c.prompt, c.cfg_scale, cfg.generator.cond_dim)?))
        .collect()
}
