//! `octaloop` verbs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};

use clap::{Args, Parser, Subcommand};
use octaloop_core::dsp::wav::write_mono;
use octaloop_core::dsp::Waveform;
use octaloop_core::generator::{CfgScale, EpochStats};
use octaloop_core::streamer::{
    outpaint_step, run_stream, segment_seed, Clock, DigestSink, MonoDirSink, Sink, StopWhen, StreamReport,
    StreamSetup, VirtualClock, WallClock, WavSink,
};
use serde::Serialize;

use crate::artifacts::{self, audio_condition, channel_states};
use crate::config::{ClockKind, EngineConfig, SinkKind, CONFIG_ENV, DEFAULT_CONFIG};
use crate::error::{exit, EngineError, Result};
use crate::service::{router, Hub, HubObserver};

const DEFAULT_PATH: &str = "config/default.toml";

#[derive(Debug, Parser)]
#[command(name = "octaloop", version, about = "Multichannel generative sound engine")]
pub struct Cli {
    /// Config file. Without one, `config/default.toml` is read, or the
    /// built-in default when that does not exist either.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Fit the patch codebook on the corpus, synthesizing the corpus if needed.
    TrainCodec,
    /// Train the token generator against the saved codebook.
    TrainModel(TrainModelArgs),
    /// Generate one segment for one channel into a mono WAV.
    Generate(GenerateArgs),
    /// Run the multichannel stream.
    Stream(StreamArgs),
    /// Time parallel segment generation against real time.
    Bench(BenchArgs),
    /// Parse and check the config, then print it fully resolved.
    ValidateConfig,
}

#[derive(Debug, Args)]
pub struct TrainModelArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Per-epoch loss trace; defaults to `train_trace.csv` in the artifacts directory.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Take prompt and scale from this `[[channels]]` entry.
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub cfg_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    /// Also serve the control API on `service.bind`.
    #[arg(long)]
    pub serve: bool,
    /// Overrides `sink.path`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON-lines event log.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Overrides `stream.duration_s`.
    #[arg(long)]
    pub seconds: Option<f64>,
    /// Switches to the virtual clock with this modeled latency per segment.
    #[arg(long, value_name = "MS")]
    pub virtual_latency: Option<f64>,
    /// Overrides `service.bind`.
    #[arg(long)]
    pub bind: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    #[arg(long, default_value_t = 3)]
    pub segments: usize,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::load(p),
        None if Path::new(DEFAULT_PATH).exists() => EngineConfig::load(DEFAULT_PATH),
        None => EngineConfig::from_toml(DEFAULT_CONFIG, "."),
    }
}

fn print_json(v: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

fn ensure_parent(p: &Path) -> Result<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(EngineError::io(d)),
        _ => Ok(()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.verb {
        Verb::TrainCodec => train_codec(&cfg),
        Verb::TrainModel(a) => train_model(cfg, a),
        Verb::Generate(a) => generate(&cfg, a),
        Verb::Stream(a) => stream(cfg, a),
        Verb::Bench(a) => bench(&cfg, a),
        Verb::ValidateConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn train_codec(cfg: &EngineConfig) -> Result<()> {
    let clips = artifacts::ensure_corpus(cfg)?;
    eprintln!("fitting {} codewords on {} clips", cfg.codec.codebook_size, clips.len());
    let (cb, report) = artifacts::fit_codec(cfg, &clips)?;
    artifacts::save_codec(cfg, &cb)?;
    print_json(&report);
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    examples: usize,
    epochs: usize,
    first: EpochStats,
    last: EpochStats,
    trace: PathBuf,
}

pub fn write_trace(path: &Path, trace: &[EpochStats]) -> Result<()> {
    ensure_parent(path)?;
    let mut text = String::from(EpochStats::CSV_HEADER);
    text.push('\n');
    for row in trace {
        text.push_str(&row.csv_row());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(EngineError::io(path))
}

fn train_model(mut cfg: EngineConfig, a: TrainModelArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let cb = artifacts::load_codec(&cfg)?;
    let clips = artifacts::ensure_corpus(&cfg)?;
    let examples = artifacts::training_examples(&cfg, &clips, &cb)?;
    eprintln!("training on {} grids for {} epochs", examples.len(), cfg.train.epochs);
    let (g, trace) = artifacts::fit_generator(&cfg, &examples, &cb)?;
    artifacts::save_generator(&cfg, &g)?;
    let trace_path = a.trace.unwrap_or_else(|| cfg.artifacts().join("train_trace.csv"));
    write_trace(&trace_path, &trace)?;
    print_json(&TrainReport {
        examples: examples.len(),
        epochs: cfg.train.epochs,
        first: trace[0],
        last: *trace.last().expect("trace has the initial row"),
        trace: trace_path,
    });
    Ok(())
}

fn generate(cfg: &EngineConfig, a: GenerateArgs) -> Result<()> {
    let pipe = artifacts::load_pipeline(cfg)?;
    let mut states = channel_states(cfg)?;
    if a.channel >= states.len() {
        return Err(EngineError::Config(format!("--channel {} out of range 0..{}", a.channel, states.len())));
    }
    let mut ch = states.swap_remove(a.channel);
    if let Some(p) = &a.prompt {
        ch.set_prompt(p)?;
    }
    if let Some(t) = a.cfg_scale {
        ch.cfg_scale = CfgScale::new(t)?;
    }
    let audio = audio_condition(cfg)?;
    let out = outpaint_step(&mut ch, &pipe, audio.as_ref(), &cfg.plan, segment_seed(a.seed, a.channel, 0))?;
    let mut samples = out.audio;
    samples.extend(ch.take_tail());
    ensure_parent(&a.out)?;
    write_mono(&a.out, &Waveform::new(samples, cfg.stft.sample_rate)?, cfg.sink.format)?;
    print_json(&serde_json::json!({
        "out": a.out,
        "prompt": ch.prompt(),
        "cfg_scale": ch.cfg_scale.value(),
        "seconds": cfg.plan.segment_seconds(&cfg.stft),
        "grid_hash": octaloop_core::streamer::grid_hash(&out.grid),
    }));
    Ok(())
}

fn bench(cfg: &EngineConfig, a: BenchArgs) -> Result<()> {
    let pipe = artifacts::load_pipeline(cfg)?;
    let report = crate::bench::bench(&pipe, cfg, a.channels, a.segments)?;
    if let Some(p) = &a.out {
        ensure_parent(p)?;
        std::fs::write(p, serde_json::to_string_pretty(&report).expect("report serializes")).map_err(EngineError::io(p))?;
    }
    print_json(&report);
    Ok(())
}

/// A sink plus, for the null kind, access to its digest afterwards.
pub enum OpenSink {
    File(Box<dyn Sink>),
    Digest(DigestSink),
}

impl OpenSink {
    pub fn as_sink(&mut self) -> &mut dyn Sink {
        match self {
            OpenSink::File(s) => s.as_mut(),
            OpenSink::Digest(d) => d,
        }
    }

    pub fn digest(&self) -> Option<String> {
        match self {
            OpenSink::Digest(d) => Some(d.hex()),
            OpenSink::File(_) => None,
        }
    }
}

pub fn open_sink(cfg: &EngineConfig, path_override: Option<&Path>) -> Result<OpenSink> {
    let path = path_override.map(Path::to_path_buf).unwrap_or_else(|| cfg.resolve(&cfg.sink.path));
    let n = cfg.channels.len();
    let rate = cfg.stft.sample_rate;
    let sink_err = |e: octaloop_core::streamer::StreamError| EngineError::Sink(format!("{}: {e}", path.display()));
    Ok(match cfg.sink.kind {
        SinkKind::Null => OpenSink::Digest(DigestSink::default()),
        SinkKind::Interleaved => {
            ensure_parent(&path).map_err(|e| EngineError::Sink(e.to_string()))?;
            let every = (cfg.sink.flush_ms * rate as f64 / 1000.0).round() as u64;
            OpenSink::File(Box::new(WavSink::create(&path, n, rate, cfg.sink.format, every).map_err(sink_err)?))
        }
        SinkKind::MonoDir => OpenSink::File(Box::new(MonoDirSink::create(&path, n, rate, cfg.sink.format).map_err(sink_err)?)),
    })
}

#[derive(Debug, Serialize)]
pub struct StreamSummary {
    pub reason: String,
    pub frames_written: u64,
    pub seconds: f64,
    pub underruns: u64,
    pub segments: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
}

impl StreamSummary {
    fn new(r: &StreamReport, rate: u32, digest: Option<String>) -> Self {
        Self {
            reason: r.reason.clone(),
            frames_written: r.frames_written,
            seconds: r.frames_written as f64 / rate as f64,
            underruns: r.stats.channels.iter().map(|c| c.underruns).sum(),
            segments: r.stats.channels.iter().map(|c| c.segments_emitted).sum(),
            digest,
        }
    }
}

fn stream(mut cfg: EngineConfig, a: StreamArgs) -> Result<()> {
    if let Some(s) = a.seconds {
        if !(s > 0.0 && s.is_finite()) {
            return Err(EngineError::Config("--seconds must be positive".into()));
        }
        cfg.stream.duration_s = Some(s);
    }
    if let Some(ms) = a.virtual_latency {
        if !(ms >= 0.0 && ms.is_finite()) {
            return Err(EngineError::Config("--virtual-latency must be ≥ 0".into()));
        }
        cfg.stream.clock = ClockKind::Virtual;
        cfg.stream.virtual_latency_ms = ms;
    }
    if let Some(b) = a.bind {
        cfg.service.bind = b;
    }
    let pipe = artifacts::load_pipeline(&cfg)?;
    let sink = open_sink(&cfg, a.out.as_deref())?;
    let log: Option<Box<dyn Write + Send>> = match &a.events {
        Some(p) => {
            ensure_parent(p)?;
            Some(Box::new(BufWriter::new(File::create(p).map_err(EngineError::io(p))?)))
        }
        None => None,
    };
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel();
    let hub = Hub::new(&cfg, pipe.codebook.clone(), tx);
    let mut setup = StreamSetup::new(channel_states(&cfg)?, cfg.plan.clone(), cfg.master_seed);
    setup.audio_cond = audio_condition(&cfg)?;
    setup.stop = StopWhen { after_seconds: cfg.stream.duration_s, flag: Some(stop.clone()) };
    setup.block_samples = cfg.block_samples();
    setup.stats_interval = cfg.stream.stats_interval_s;
    setup.prefetch = cfg.stream.prefetch;
    let clock: Box<dyn Clock> = match cfg.stream.clock {
        ClockKind::Wall => Box::new(WallClock::new()),
        ClockKind::Virtual => Box::new(VirtualClock::new(cfg.stream.virtual_latency_ms / 1000.0)),
    };

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| EngineError::Service(e.to_string()))?;
    let listener = if a.serve {
        let l = runtime
            .block_on(tokio::net::TcpListener::bind(&cfg.service.bind))
            .map_err(|e| EngineError::Service(format!("bind {}: {e}", cfg.service.bind)))?;
        eprintln!("control API on http://{}/api/v1/state", l.local_addr().map_err(|e| EngineError::Service(e.to_string()))?);
        Some(l)
    } else {
        None
    };

    let observer_hub = hub.clone();
    let rate = cfg.stft.sample_rate;
    let worker = std::thread::spawn(move || -> Result<StreamSummary> {
        let mut sink = sink;
        let mut observer = HubObserver::new(observer_hub, log);
        let report = run_stream(&pipe, setup, sink.as_sink(), clock.as_ref(), Some(&rx), &mut observer)?;
        Ok(StreamSummary::new(&report, rate, sink.digest()))
    });

    let flag = stop.clone();
    let summary = runtime.block_on(async move {
        let (done_tx, done_rx) = tokio::sync::oneshot::channel();
        let waiter = tokio::task::spawn_blocking(move || {
            let r = worker.join().map_err(|_| EngineError::Service("stream thread panicked".into()));
            let _ = done_tx.send(());
            r
        });
        tokio::spawn(async move {
            if tokio::signal::ctrl_c().await.is_ok() {
                eprintln!("stopping at the next block");
                flag.store(true, Ordering::Relaxed);
            }
        });
        if let Some(l) = listener {
            let app = router(hub);
            let served = axum::serve(l, app).with_graceful_shutdown(async move {
                let _ = done_rx.await;
            });
            served.await.map_err(|e| EngineError::Service(e.to_string()))?;
        }
        waiter.await.map_err(|e| EngineError::Service(e.to_string()))?
    })??;
    stop.store(true, Ordering::Relaxed);
    print_json(&summary);
    Ok(())
}
