use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{grid_hash, outpaint_step, segment_seed, ChannelState, OutpaintPlan, Pipeline, Result, SegmentOutput, Sink, StreamError};
use crate::codec::TokenGrid;
use crate::conditioning::CondEmbedding;
use crate::generator::CfgScale;

/// Time source for pacing. Times are seconds on the clock's own axis.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
    /// Blocks the emitter until `t`.
    fn wait_until(&self, t: f64);
    /// When a segment requested at `requested` becomes playable, given that
    /// the same worker finished its previous segment at `previous`.
    fn completion(&self, requested: f64, previous: f64) -> f64;
    /// Virtual clocks make the emitter wait for in-flight work instead of
    /// declaring an underrun, so runs are reproducible.
    fn is_virtual(&self) -> bool;
}

/// Simulated time: each segment takes a fixed modeled latency, whatever the
/// host needs to compute it.
#[derive(Debug)]
pub struct VirtualClock {
    latency: f64,
    now: Mutex<f64>,
}

impl VirtualClock {
    pub fn new(latency_secs: f64) -> Self {
        Self { latency: latency_secs.max(0.0), now: Mutex::new(0.0) }
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        *self.now.lock().expect("clock lock")
    }

    fn wait_until(&self, t: f64) {
        let mut now = self.now.lock().expect("clock lock");
        *now = now.max(t);
    }

    fn completion(&self, requested: f64, previous: f64) -> f64 {
        requested.max(previous) + self.latency
    }

    fn is_virtual(&self) -> bool {
        true
    }
}

#[derive(Debug)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self { start: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn wait_until(&self, t: f64) {
        let dt = t - self.now();
        if dt > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(dt));
        }
    }

    fn completion(&self, _requested: f64, _previous: f64) -> f64 {
        self.now()
    }

    fn is_virtual(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Control {
    SetPrompt { channel: usize, prompt: String },
    SetCfgScale { channel: usize, scale: CfgScale },
    Pause,
    Resume,
    Snapshot,
    Stop,
}

impl Control {
    pub fn channel(&self) -> Option<usize> {
        match self {
            Control::SetPrompt { channel, .. } | Control::SetCfgScale { channel, .. } => Some(*channel),
            _ => None,
        }
    }

    /// Checks the event against a stream of `channels` channels.
    pub fn validate(&self, channels: usize) -> std::result::Result<(), String> {
        if let Some(c) = self.channel() {
            if c >= channels {
                return Err(format!("channel {c} out of range 0..{channels}"));
            }
        }
        if let Control::SetPrompt { prompt, .. } = self {
            if prompt.trim().is_empty() {
                return Err("prompt is empty".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub id: u64,
    #[serde(flatten)]
    pub control: Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub channel: usize,
    pub prompt: String,
    pub cfg_scale: f64,
    /// Segments whose playback has started.
    pub segments_emitted: u64,
    /// Segments generated and playable, including the one playing.
    pub segments_generated: u64,
    /// Host compute time of the latest playable segment.
    pub last_latency_ms: f64,
    pub buffer_seconds: f64,
    pub underruns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub at: f64,
    pub paused: bool,
    pub channels: Vec<ChannelStats>,
}

/// Everything the emitter reports, one JSON object per line on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamEvent {
    Started { at: f64, channels: usize },
    Stats(StreamStats),
    SegmentBoundary { channel: usize, segment: u64, at: f64, grid_hash: String, prompt: String, cfg_scale: f64 },
    ControlApplied { id: u64, control: Control, segment: Option<u64>, at: f64 },
    ControlRejected { id: u64, reason: String, at: f64 },
    Underrun { channel: usize, at: f64, total: u64 },
    Snapshot { stats: StreamStats },
    Stopped { at: f64, reason: String, stats: StreamStats },
}

pub trait StreamObserver {
    fn event(&mut self, e: &StreamEvent);
    /// Called when a segment starts playing.
    fn segment(&mut self, _channel: usize, _segment: u64, _grid: &TokenGrid) {}
}

impl<F: FnMut(&StreamEvent)> StreamObserver for F {
    fn event(&mut self, e: &StreamEvent) {
        self(e)
    }
}

#[derive(Debug, Clone, Default)]
pub struct StopWhen {
    /// Playback seconds after which the stream ends.
    pub after_seconds: Option<f64>,
    pub flag: Option<Arc<AtomicBool>>,
}

pub struct StreamSetup {
    pub channels: Vec<ChannelState>,
    /// Shared by every channel.
    pub audio_cond: Option<CondEmbedding>,
    pub plan: OutpaintPlan,
    pub master_seed: u64,
    pub stop: StopWhen,
    pub block_samples: usize,
    pub stats_interval: f64,
    /// Segments requested ahead of playback.
    pub prefetch: usize,
    /// Controls injected at given clock times, for reproducible runs.
    pub script: Vec<(f64, ControlCommand)>,
}

impl StreamSetup {
    pub fn new(channels: Vec<ChannelState>, plan: OutpaintPlan, master_seed: u64) -> Self {
        Self {
            channels,
            audio_cond: None,
            plan,
            master_seed,
            stop: StopWhen::default(),
            block_samples: 4800,
            stats_interval: 1.0,
            prefetch: 2,
            script: Vec::new(),
        }
    }
}

#[derive(Debug)]
pub struct StreamReport {
    pub stats: StreamStats,
    pub frames_written: u64,
    pub reason: String,
    /// Final state of every channel, token history included.
    pub channels: Vec<ChannelState>,
}

struct Credit {
    at: f64,
    updates: Vec<ControlCommand>,
}

struct Produced {
    segment: SegmentOutput,
    ready_at: f64,
    compute_ms: f64,
    applied: Vec<ControlCommand>,
    prompt: String,
    cfg_scale: f64,
}

#[allow(clippy::too_many_arguments)]
fn worker(
    mut ch: ChannelState,
    pipe: &Pipeline,
    audio: Option<&CondEmbedding>,
    plan: &OutpaintPlan,
    master: u64,
    clock: &dyn Clock,
    cancel: &AtomicBool,
    credits: Receiver<Credit>,
    out: Sender<Result<Produced>>,
) -> ChannelState {
    let mut last_ready = f64::NEG_INFINITY;
    while let Ok(credit) = credits.recv() {
        if cancel.load(Ordering::Relaxed) {
            break;
        }
        for cmd in &credit.updates {
            match &cmd.control {
                Control::SetPrompt { prompt, .. } => {
                    // validated upstream; an unusable prompt keeps the old one
                    let _ = ch.set_prompt(prompt);
                }
                Control::SetCfgScale { scale, .. } => ch.cfg_scale = *scale,
                _ => {}
            }
        }
        let seed = segment_seed(master, ch.channel_id, ch.segments_emitted);
        let started = Instant::now();
        let msg = outpaint_step(&mut ch, pipe, audio, plan, seed).map(|segment| {
            let ready_at = clock.completion(credit.at, last_ready);
            last_ready = ready_at;
            Produced {
                segment,
                ready_at,
                compute_ms: started.elapsed().as_secs_f64() * 1e3,
                applied: credit.updates,
                prompt: ch.prompt().to_string(),
                cfg_scale: ch.cfg_scale.value(),
            }
        });
        let failed = msg.is_err();
        if out.send(msg).is_err() || failed {
            break;
        }
    }
    ch
}

struct Playing {
    produced: Produced,
    pos: usize,
}

struct Lane<'c> {
    clock: &'c dyn Clock,
    credits: Sender<Credit>,
    results: Receiver<Result<Produced>>,
    pending: VecDeque<Produced>,
    queue: VecDeque<Playing>,
    in_flight: usize,
    /// Ready times of in-flight credits, as the worker will compute them.
    /// Only meaningful on a virtual clock.
    due: VecDeque<f64>,
    last_due: f64,
    updates: Vec<ControlCommand>,
    stats: ChannelStats,
}

impl Lane<'_> {
    fn buffered(&self) -> usize {
        self.queue.iter().map(|p| p.produced.segment.audio.len() - p.pos).sum()
    }

    fn credit(&mut self, at: f64) -> Result<()> {
        let updates = std::mem::take(&mut self.updates);
        self.credits.send(Credit { at, updates }).map_err(|_| StreamError::Worker(self.stats.channel))?;
        self.in_flight += 1;
        self.last_due = self.clock.completion(at, self.last_due);
        self.due.push_back(self.last_due);
        Ok(())
    }

    fn accept(&mut self, msg: Result<Produced>) -> Result<()> {
        let p = msg?;
        self.in_flight -= 1;
        self.due.pop_front();
        self.pending.push_back(p);
        Ok(())
    }

    /// Collects finished segments and queues those ready at `tau`. On a
    /// virtual clock it first waits for every in-flight segment due by `tau`,
    /// so what is playable never depends on host speed.
    fn pump(&mut self, tau: f64) -> Result<()> {
        loop {
            loop {
                match self.results.try_recv() {
                    Ok(m) => self.accept(m)?,
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) if self.in_flight > 0 => {
                        return Err(StreamError::Worker(self.stats.channel))
                    }
                    Err(TryRecvError::Disconnected) => break,
                }
            }
            while self.pending.front().is_some_and(|p| p.ready_at <= tau) {
                let produced = self.pending.pop_front().expect("checked");
                self.stats.segments_generated += 1;
                self.stats.last_latency_ms = produced.compute_ms;
                self.queue.push_back(Playing { produced, pos: 0 });
            }
            if !(self.clock.is_virtual() && self.due.front().is_some_and(|&d| d <= tau)) {
                return Ok(());
            }
            let m = self.results.recv().map_err(|_| StreamError::Worker(self.stats.channel))?;
            self.accept(m)?;
        }
    }

    fn fill(&mut self, out: &mut [f32], tau: f64, rate: f64, obs: &mut dyn StreamObserver) -> Result<()> {
        let mut i = 0;
        while i < out.len() {
            let Some(front) = self.queue.front_mut() else { break };
            if front.pos == 0 {
                let at = tau + i as f64 / rate;
                let p = &front.produced;
                self.stats.segments_emitted += 1;
                self.stats.prompt = p.prompt.clone();
                self.stats.cfg_scale = p.cfg_scale;
                for cmd in &p.applied {
                    obs.event(&StreamEvent::ControlApplied {
                        id: cmd.id,
                        control: cmd.control.clone(),
                        segment: Some(p.segment.index),
                        at,
                    });
                }
                obs.event(&StreamEvent::SegmentBoundary {
                    channel: self.stats.channel,
                    segment: p.segment.index,
                    at,
                    grid_hash: grid_hash(&p.segment.grid),
                    prompt: p.prompt.clone(),
                    cfg_scale: p.cfg_scale,
                });
                obs.segment(self.stats.channel, p.segment.index, &p.segment.grid);
                self.credit(at)?;
            }
            let front = self.queue.front_mut().expect("still there");
            let audio = &front.produced.segment.audio;
            let take = (out.len() - i).min(audio.len() - front.pos);
            out[i..i + take].copy_from_slice(&audio[front.pos..front.pos + take]);
            front.pos += take;
            i += take;
            if front.pos == audio.len() {
                self.queue.pop_front();
            }
        }
        if i < out.len() {
            self.stats.underruns += 1;
            obs.event(&StreamEvent::Underrun { channel: self.stats.channel, at: tau + i as f64 / rate, total: self.stats.underruns });
        }
        Ok(())
    }
}

fn stats(lanes: &[Lane<'_>], at: f64, paused: bool, rate: f64) -> StreamStats {
    StreamStats {
        at,
        paused,
        channels: lanes
            .iter()
            .map(|l| ChannelStats { buffer_seconds: l.buffered() as f64 / rate, ..l.stats.clone() })
            .collect(),
    }
}

/// Runs every channel until a stop condition, a `Stop` control, or a sink
/// failure.
///
/// One worker thread per channel generates segments on credit from the
/// emitter, which owns the sink and writes `block_samples` frames at a time.
/// A channel with nothing playable gets silence and an underrun count; the
/// others continue. Prompt and scale changes ride on the next credit, so they
/// take effect from a segment boundary on. Playback begins once every channel
/// has its first segment.
pub fn run_stream(
    pipe: &Pipeline,
    setup: StreamSetup,
    sink: &mut dyn Sink,
    clock: &dyn Clock,
    controls: Option<&Receiver<ControlCommand>>,
    observer: &mut dyn StreamObserver,
) -> Result<StreamReport> {
    pipe.check_plan(&setup.plan)?;
    if setup.block_samples == 0 || setup.channels.is_empty() {
        return Err(StreamError::Plan("need at least one channel and a non-empty block".into()));
    }
    let n = setup.channels.len();
    let rate = pipe.stft.sample_rate as f64;
    let block = setup.block_samples;
    let cancel = AtomicBool::new(false);
    let mut script: VecDeque<(f64, ControlCommand)> = {
        let mut s = setup.script;
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        s.into()
    };
    let StreamSetup { channels, audio_cond, plan, master_seed, stop, stats_interval, prefetch, .. } = setup;

    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(n);
        let mut lanes = Vec::with_capacity(n);
        for ch in channels {
            let (ctx, crx) = mpsc::channel();
            let (rtx, rrx) = mpsc::channel();
            let stats = ChannelStats {
                channel: ch.channel_id,
                prompt: ch.prompt().to_string(),
                cfg_scale: ch.cfg_scale.value(),
                segments_emitted: 0,
                segments_generated: 0,
                last_latency_ms: 0.0,
                buffer_seconds: 0.0,
                underruns: 0,
            };
            let (audio, plan, cancel) = (audio_cond.as_ref(), &plan, &cancel);
            handles.push(scope.spawn(move || worker(ch, pipe, audio, plan, master_seed, clock, cancel, crx, rtx)));
            lanes.push(Lane {
                clock,
                credits: ctx,
                results: rrx,
                pending: VecDeque::new(),
                queue: VecDeque::new(),
                in_flight: 0,
                due: VecDeque::new(),
                last_due: f64::NEG_INFINITY,
                updates: Vec::new(),
                stats,
            });
        }

        let mut paused = false;
        let mut frames = 0u64;
        let outcome = (|| -> Result<String> {
            let t_req = clock.now();
            for lane in lanes.iter_mut() {
                for _ in 0..prefetch.max(1) {
                    lane.credit(t_req)?;
                }
            }
            let mut t0 = clock.now();
            for lane in lanes.iter_mut() {
                while lane.pending.is_empty() {
                    let m = lane.results.recv().map_err(|_| StreamError::Worker(lane.stats.channel))?;
                    lane.accept(m)?;
                }
                t0 = t0.max(lane.pending[0].ready_at);
            }
            clock.wait_until(t0);
            observer.event(&StreamEvent::Started { at: t0, channels: n });
            let mut next_stats = t0;
            for k in 0u64.. {
                let tau = t0 + (k as usize * block) as f64 / rate;
                clock.wait_until(tau);

                let mut incoming = Vec::new();
                while script.front().is_some_and(|(at, _)| *at <= tau) {
                    incoming.push(script.pop_front().expect("checked").1);
                }
                if let Some(rx) = controls {
                    incoming.extend(rx.try_iter());
                }
                let mut stop_now = None;
                for cmd in incoming {
                    if let Err(reason) = cmd.control.validate(n) {
                        observer.event(&StreamEvent::ControlRejected { id: cmd.id, reason, at: tau });
                        continue;
                    }
                    match &cmd.control {
                        Control::SetPrompt { channel, .. } | Control::SetCfgScale { channel, .. } => {
                            lanes[*channel].updates.push(cmd);
                            continue;
                        }
                        Control::Pause => paused = true,
                        Control::Resume => paused = false,
                        Control::Snapshot => observer.event(&StreamEvent::Snapshot { stats: stats(&lanes, tau, paused, rate) }),
                        Control::Stop => stop_now = Some("stop requested".to_string()),
                    }
                    observer.event(&StreamEvent::ControlApplied { id: cmd.id, control: cmd.control, segment: None, at: tau });
                }
                if let Some(reason) = stop_now {
                    return Ok(reason);
                }
                if stop.flag.as_ref().is_some_and(|f| f.load(Ordering::Relaxed)) {
                    return Ok("stop signal".into());
                }

                let mut out = vec![vec![0.0f32; block]; n];
                if !paused {
                    for (lane, buf) in lanes.iter_mut().zip(out.iter_mut()) {
                        lane.pump(tau)?;
                        lane.fill(buf, tau, rate, observer)?;
                    }
                }
                sink.write(&out)?;
                frames += block as u64;

                let played = ((k + 1) as usize * block) as f64 / rate;
                if tau + block as f64 / rate >= next_stats + stats_interval {
                    next_stats += stats_interval;
                    observer.event(&StreamEvent::Stats(stats(&lanes, tau + block as f64 / rate, paused, rate)));
                }
                if stop.after_seconds.is_some_and(|d| played >= d) {
                    return Ok("duration reached".into());
                }
            }
            unreachable!("the block loop only exits by returning")
        })();

        cancel.store(true, Ordering::Relaxed);
        let end = clock.now();
        let final_stats = stats(&lanes, end, paused, rate);
        drop(lanes);
        let states: Vec<ChannelState> =
            handles.into_iter().map(|h| h.join().expect("channel worker panicked")).collect();
        let finalized = sink.finalize();
        let reason = match &outcome {
            Ok(r) => r.clone(),
            Err(e) => format!("error: {e}"),
        };
        observer.event(&StreamEvent::Stopped { at: end, reason: reason.clone(), stats: final_stats.clone() });
        outcome?;
        finalized?;
        Ok(StreamReport { stats: final_stats, frames_written: frames, reason, channels: states })
    })
}
