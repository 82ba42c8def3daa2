//! HTTP control service.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/v1/state` | [`EngineState`] snapshot |
//! | POST | `/api/v1/control` | a `Control` object; `202` with [`ControlAccepted`] or `4xx/503` with [`ControlError`] |
//! | GET | `/api/v1/events` | server-sent events: one `state`, then every `StreamEvent` named by its `type` |
//! | GET | `/api/v1/channels/{id}/spectrogram.png` | mel of the segment now playing |
//! | GET | `/api/v1/schema` | JSON Schema of all of the above |
//!
//! Prompt and scale changes are queued and ride on the channel's next
//! segment request, which is made at the next boundary. That segment starts
//! playing `stream.prefetch` boundaries after the request, so with the
//! default of 2 a change is heard from the third boundary after it was
//! posted. The boundary is announced by a `control_applied` event carrying
//! the request id.

use std::convert::Infallible;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use octaloop_core::codec::{vq_decode, Codebook, TokenGrid};
use octaloop_core::dsp::StftConfig;
use octaloop_core::streamer::{Control, ControlCommand, StreamEvent, StreamObserver, StreamStats};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::config::EngineConfig;
use crate::spectrogram::render_png;

pub const API_VERSION: u32 = 1;
pub const SCHEMA: &str = include_str!("../schema/api-v1.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Starting,
    Running,
    Paused,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelView {
    pub channel: usize,
    pub prompt: String,
    pub cfg_scale: f64,
    pub segments_emitted: u64,
    pub segments_generated: u64,
    pub last_latency_ms: f64,
    pub buffer_seconds: f64,
    pub underruns: u64,
    pub last_grid_hash: Option<String>,
    pub last_boundary_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub api_version: u32,
    pub status: Status,
    /// Stream time of the latest update, seconds.
    pub at: f64,
    pub stop_reason: Option<String>,
    pub channels: Vec<ChannelView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAccepted {
    pub id: u64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlError {
    /// `malformed`, `invalid` or `stopped`.
    pub error: String,
    pub reason: String,
}

impl ControlError {
    fn response(code: StatusCode, error: &str, reason: impl Into<String>) -> Response {
        (code, Json(ControlError { error: error.into(), reason: reason.into() })).into_response()
    }
}

/// Shared between the stream thread (through [`HubObserver`]) and the
/// request handlers.
pub struct Hub {
    state: RwLock<EngineState>,
    grids: Mutex<Vec<Option<TokenGrid>>>,
    events: broadcast::Sender<StreamEvent>,
    controls: Mutex<Option<mpsc::Sender<ControlCommand>>>,
    next_id: AtomicU64,
    codebook: Codebook,
    stft: StftConfig,
}

impl Hub {
    pub fn new(cfg: &EngineConfig, codebook: Codebook, controls: mpsc::Sender<ControlCommand>) -> Arc<Self> {
        let channels = cfg
            .channels
            .iter()
            .enumerate()
            .map(|(i, c)| ChannelView {
                channel: i,
                prompt: c.prompt.clone(),
                cfg_scale: c.cfg_scale.value(),
                segments_emitted: 0,
                segments_generated: 0,
                last_latency_ms: 0.0,
                buffer_seconds: 0.0,
                underruns: 0,
                last_grid_hash: None,
                last_boundary_at: None,
            })
            .collect();
        let (events, _) = broadcast::channel(cfg.service.event_buffer);
        Arc::new(Hub {
            state: RwLock::new(EngineState { api_version: API_VERSION, status: Status::Starting, at: 0.0, stop_reason: None, channels }),
            grids: Mutex::new(vec![None; cfg.channels.len()]),
            events,
            controls: Mutex::new(Some(controls)),
            next_id: AtomicU64::new(1),
            codebook,
            stft: cfg.stft.clone(),
        })
    }

    pub fn state(&self) -> EngineState {
        self.state.read().expect("state lock").clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamEvent> {
        self.events.subscribe()
    }

    /// Validates and queues a control; returns its id.
    pub fn submit(&self, control: Control) -> Result<u64, (StatusCode, ControlError)> {
        let n = self.state.read().expect("state lock").channels.len();
        control
            .validate(n)
            .map_err(|reason| (StatusCode::UNPROCESSABLE_ENTITY, ControlError { error: "invalid".into(), reason }))?;
        let stopped = || (StatusCode::SERVICE_UNAVAILABLE, ControlError { error: "stopped".into(), reason: "stream is not running".into() });
        let guard = self.controls.lock().expect("controls lock");
        let tx = guard.as_ref().ok_or_else(stopped)?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        tx.send(ControlCommand { id, control }).map_err(|_| stopped())?;
        Ok(id)
    }

    /// PNG of the grid now playing on `channel`, if any.
    pub fn spectrogram_png(&self, channel: usize) -> Option<Vec<u8>> {
        let grid = self.grids.lock().expect("grid lock").get(channel)?.clone()?;
        let mel = vq_decode(&grid, &self.codebook, &self.stft, None).ok()?;
        Some(render_png(&mel))
    }

    /// Stops accepting controls.
    pub fn close(&self) {
        self.controls.lock().expect("controls lock").take();
    }

    fn apply(&self, e: &StreamEvent) {
        let mut s = self.state.write().expect("state lock");
        let merge = |s: &mut EngineState, st: &StreamStats| {
            s.at = st.at;
            for c in &st.channels {
                if let Some(v) = s.channels.get_mut(c.channel) {
                    v.prompt.clone_from(&c.prompt);
                    v.cfg_scale = c.cfg_scale;
                    v.segments_emitted = c.segments_emitted;
                    v.segments_generated = c.segments_generated;
                    v.last_latency_ms = c.last_latency_ms;
                    v.buffer_seconds = c.buffer_seconds;
                    v.underruns = c.underruns;
                }
            }
        };
        match e {
            StreamEvent::Started { at, .. } => {
                s.status = Status::Running;
                s.at = *at;
            }
            StreamEvent::Stats(st) | StreamEvent::Snapshot { stats: st } => {
                merge(&mut s, st);
                if s.status != Status::Stopped {
                    s.status = if st.paused { Status::Paused } else { Status::Running };
                }
            }
            StreamEvent::SegmentBoundary { channel, segment, at, grid_hash, prompt, cfg_scale } => {
                if let Some(v) = s.channels.get_mut(*channel) {
                    v.segments_emitted = segment + 1;
                    v.last_grid_hash = Some(grid_hash.clone());
                    v.last_boundary_at = Some(*at);
                    v.prompt.clone_from(prompt);
                    v.cfg_scale = *cfg_scale;
                }
                s.at = s.at.max(*at);
            }
            StreamEvent::ControlApplied { control, at, .. } => {
                match control {
                    Control::Pause => s.status = Status::Paused,
                    Control::Resume => s.status = Status::Running,
                    _ => {}
                }
                s.at = s.at.max(*at);
            }
            StreamEvent::Underrun { channel, total, .. } => {
                if let Some(v) = s.channels.get_mut(*channel) {
                    v.underruns = *total;
                }
            }
            StreamEvent::ControlRejected { .. } => {}
            StreamEvent::Stopped { reason, stats, .. } => {
                merge(&mut s, stats);
                s.status = Status::Stopped;
                s.stop_reason = Some(reason.clone());
            }
        }
    }
}

/// Feeds stream events into the hub and, optionally, a JSON-lines log.
pub struct HubObserver {
    hub: Arc<Hub>,
    log: Option<Box<dyn Write + Send>>,
}

impl HubObserver {
    pub fn new(hub: Arc<Hub>, log: Option<Box<dyn Write + Send>>) -> Self {
        Self { hub, log }
    }
}

impl StreamObserver for HubObserver {
    fn event(&mut self, e: &StreamEvent) {
        self.hub.apply(e);
        if let Some(w) = self.log.as_mut() {
            // the log is diagnostic; a full disk must not stop the audio
            let _ = serde_json::to_writer(&mut *w, e).and_then(|_| w.write_all(b"\n").map_err(serde_json::Error::io));
            if matches!(e, StreamEvent::SegmentBoundary { .. } | StreamEvent::Stopped { .. } | StreamEvent::ControlApplied { .. }) {
                let _ = w.flush();
            }
        }
        if matches!(e, StreamEvent::Stopped { .. }) {
            self.hub.close();
        }
        let _ = self.hub.events.send(e.clone());
    }

    fn segment(&mut self, channel: usize, _segment: u64, grid: &TokenGrid) {
        if let Some(slot) = self.hub.grids.lock().expect("grid lock").get_mut(channel) {
            *slot = Some(grid.clone());
        }
    }
}

pub fn event_type(e: &StreamEvent) -> String {
    serde_json::to_value(e).ok().and_then(|v| v["type"].as_str().map(str::to_string)).unwrap_or_default()
}

async fn get_state(State(hub): State<Arc<Hub>>) -> Json<EngineState> {
    Json(hub.state())
}

/// Strict parse: unit variants of a tagged enum let stray fields through,
/// so the keys are compared against the re-serialized value.
pub fn parse_control(body: &[u8]) -> Result<Control, String> {
    let raw: serde_json::Value = serde_json::from_slice(body).map_err(|e| e.to_string())?;
    let control: Control = serde_json::from_value(raw.clone()).map_err(|e| e.to_string())?;
    let known = serde_json::to_value(&control).expect("control serializes");
    if let (Some(r), Some(k)) = (raw.as_object(), known.as_object()) {
        if let Some(extra) = r.keys().find(|key| !k.contains_key(*key)) {
            return Err(format!("unknown field `{extra}`"));
        }
    }
    Ok(control)
}

async fn post_control(State(hub): State<Arc<Hub>>, body: Bytes) -> Response {
    let control = match parse_control(&body) {
        Ok(c) => c,
        Err(reason) => return ControlError::response(StatusCode::BAD_REQUEST, "malformed", reason),
    };
    match hub.submit(control) {
        Ok(id) => (StatusCode::ACCEPTED, Json(ControlAccepted { id, status: "queued".into() })).into_response(),
        Err((code, err)) => (code, Json(err)).into_response(),
    }
}

fn event_stream(hub: &Hub) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = hub.subscribe();
    let first = hub.state();
    let done = first.status == Status::Stopped;
    let head = futures::stream::once(async move { Ok(Event::default().event("state").json_data(&first).expect("state serializes")) });
    let tail = futures::stream::unfold((rx, done), |(mut rx, done)| async move {
        if done {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(e) => {
                    let last = matches!(e, StreamEvent::Stopped { .. });
                    let ev = Event::default().event(event_type(&e)).json_data(&e).expect("event serializes");
                    return Some((Ok(ev), (rx, last)));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    head.chain(tail)
}

async fn events(State(hub): State<Arc<Hub>>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    Sse::new(event_stream(&hub)).keep_alive(KeepAlive::default())
}

async fn spectrogram(State(hub): State<Arc<Hub>>, Path(id): Path<usize>) -> Response {
    let n = hub.state.read().expect("state lock").channels.len();
    if id >= n {
        return ControlError::response(StatusCode::NOT_FOUND, "invalid", format!("channel {id} out of range 0..{n}"));
    }
    match hub.spectrogram_png(id) {
        Some(png) => ([(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "no-store")], png).into_response(),
        None => ControlError::response(StatusCode::NOT_FOUND, "invalid", format!("channel {id} has not played a segment yet")),
    }
}

async fn schema() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/schema+json")], SCHEMA)
}

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/api/v1/state", get(get_state))
        .route("/api/v1/control", post(post_control))
        .route("/api/v1/events", get(events))
        .route("/api/v1/channels/{id}/spectrogram.png", get(spectrogram))
        .route("/api/v1/schema", get(schema))
        .with_state(hub)
}
