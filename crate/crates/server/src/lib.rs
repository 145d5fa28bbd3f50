//! HTTP+JSON API and server-sent event stream over a running simulation.
//!
//! The API reads from and writes to one shared [`Simulation`]; every
//! mutation goes through its monitoring server under a single lock.

use std::convert::Infallible;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use solarlink::scenario::Simulation;
use solarlink::server::{readings_csv, ConfigUpdate, ServerError, ServerEvent};
use solarlink::SimTime;
use tokio::sync::broadcast;
use tokio_stream::wrappers::BroadcastStream;
use tokio_stream::{Stream, StreamExt};

pub mod views;
pub mod webhook;

pub use webhook::WebhookSink;

use views::{AggregatesView, AlarmView, LedgerView, ReadingView};

const EVENT_BUFFER: usize = 1024;

#[derive(Clone)]
pub struct AppState {
    sim: Arc<Mutex<Simulation>>,
    events: broadcast::Sender<ServerEvent>,
}

impl AppState {
    /// Takes over `sim` and forwards its server events to stream subscribers.
    pub fn new(mut sim: Simulation) -> Self {
        let (tx, _) = broadcast::channel(EVENT_BUFFER);
        let forward = tx.clone();
        sim.server_mut().subscribe(Box::new(move |e: &ServerEvent| {
            let _ = forward.send(e.clone());
        }));
        AppState {
            sim: Arc::new(Mutex::new(sim)),
            events: tx,
        }
    }

    pub fn simulation(&self) -> Arc<Mutex<Simulation>> {
        Arc::clone(&self.sim)
    }

    pub fn lock(&self) -> MutexGuard<'_, Simulation> {
        self.sim.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ServerEvent> {
        self.events.subscribe()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/readings", get(readings))
        .route("/api/readings.csv", get(readings_csv_export))
        .route("/api/aggregates/daily", get(daily))
        .route("/api/alarms", get(alarms))
        .route("/api/alarms/{id}/ack", post(ack))
        .route("/api/poll", post(poll))
        .route("/api/ledger", get(ledger))
        .route("/api/config", get(get_config).put(put_config))
        .route("/api/events", get(events))
        .with_state(state)
}

/// Serves the API on a bound listener until the process exits.
pub async fn serve(state: AppState, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl From<ServerError> for ApiError {
    fn from(e: ServerError) -> Self {
        let status = match e {
            ServerError::PollInProgress => StatusCode::CONFLICT,
            ServerError::UnknownAlarm(_) => StatusCode::NOT_FOUND,
            ServerError::InvalidConfig(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServerError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
struct RangeQuery {
    from: Option<u64>,
    to: Option<u64>,
}

impl RangeQuery {
    /// Whole-second bounds, inclusive at both ends.
    fn bounds(&self) -> ApiResult<(SimTime, SimTime)> {
        let from = SimTime::from_secs(self.from.unwrap_or(0));
        let to = match self.to {
            Some(t) => SimTime::from_millis(t.saturating_mul(1000).saturating_add(999)),
            None => SimTime::from_millis(u64::MAX),
        };
        if from > to {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "from must not be after to"));
        }
        Ok((from, to))
    }
}

async fn readings(State(st): State<AppState>, Query(q): Query<RangeQuery>) -> ApiResult<Json<Vec<ReadingView>>> {
    let (from, to) = q.bounds()?;
    let sim = st.lock();
    Ok(Json(sim.server().query_range(from, to).iter().map(Into::into).collect()))
}

async fn readings_csv_export(State(st): State<AppState>, Query(q): Query<RangeQuery>) -> ApiResult<Response> {
    let (from, to) = q.bounds()?;
    let body = readings_csv(st.lock().server().query_range(from, to));
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response())
}

#[derive(Debug, Deserialize)]
struct DayQuery {
    #[serde(default)]
    day: u64,
}

async fn daily(State(st): State<AppState>, Query(q): Query<DayQuery>) -> Json<AggregatesView> {
    Json((&st.lock().server().daily_aggregates(q.day)).into())
}

#[derive(Debug, Deserialize)]
struct OpenQuery {
    open: Option<bool>,
}

async fn alarms(State(st): State<AppState>, Query(q): Query<OpenQuery>) -> Json<Vec<AlarmView>> {
    Json(st.lock().server().alarms(q.open).iter().map(Into::into).collect())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AckBody {
    by: Option<String>,
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))
}

async fn ack(State(st): State<AppState>, Path(id): Path<u64>, body: Bytes) -> ApiResult<Json<AlarmView>> {
    let body: AckBody = if body.iter().all(u8::is_ascii_whitespace) {
        AckBody::default()
    } else {
        parse_body(&body)?
    };
    let mut sim = st.lock();
    let now = sim.now();
    let alarm = sim.server_mut().acknowledge(id, body.by, now)?;
    Ok(Json((&alarm).into()))
}

async fn poll(State(st): State<AppState>) -> ApiResult<(StatusCode, Json<Value>)> {
    let mut sim = st.lock();
    let placed = sim.trigger_poll_now()?;
    let status = if placed.is_some() { "ringing" } else { "redial_pending" };
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "call_id": placed, "status": status, "t": sim.now().as_secs() })),
    ))
}

async fn ledger(State(st): State<AppState>) -> Json<LedgerView> {
    Json((&st.lock().server().ledger()).into())
}

async fn get_config(State(st): State<AppState>) -> Json<Value> {
    Json(serde_json::to_value(st.lock().server().config()).expect("config serializes"))
}

async fn put_config(State(st): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let update: ConfigUpdate = parse_body(&body)?;
    let mut sim = st.lock();
    let now = sim.now();
    let cfg = sim.server_mut().update_config(update, now)?;
    Ok(Json(serde_json::to_value(cfg).expect("config serializes")))
}

async fn events(State(st): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let stream = BroadcastStream::new(st.subscribe()).filter_map(|r| {
        // A slow client that falls behind skips what it missed.
        let e = r.ok()?;
        Some(Ok(Event::default()
            .id(e.id.to_string())
            .event(views::event_name(&e))
            .data(views::event(&e).to_string())))
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

/// Keeps a shared simulation running against the wall clock.
pub struct Clock {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Clock {
    /// Steps the simulation at `speed` simulated seconds per wall second,
    /// past the end of its scenario if need be.
    pub fn start(sim: Arc<Mutex<Simulation>>, speed: f64) -> Clock {
        assert!(speed > 0.0 && speed.is_finite(), "speed must be positive");
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = std::thread::spawn(move || {
            let tick = sim.lock().unwrap_or_else(|p| p.into_inner()).tick_len();
            let pause = Duration::from_secs_f64(tick.as_secs_f64() / speed);
            while !flag.load(Ordering::Relaxed) {
                std::thread::sleep(pause);
                let mut s = sim.lock().unwrap_or_else(|p| p.into_inner());
                if let Err(e) = s.step() {
                    eprintln!("simulation stopped: {e}");
                    return;
                }
            }
        });
        Clock {
            stop,
            thread: Some(thread),
        }
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Clock {
    fn drop(&mut self) {
        self.halt();
    }
}
