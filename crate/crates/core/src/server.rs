//! Monitoring server: calls the field unit on a schedule, decodes the tones
//! it hears, stores readings, tracks airtime and raises alarms.
//!
//! The server is driven by [`MonitorServer::tick`] on the same clock as the
//! rest of the simulation. All mutations go through `&mut self`, so a host
//! that shares the server behind a lock gets a single writer for free.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dtmf::{decode_frame, detect, DataFrame, DtmfSymbol, FrameError, ToneTiming, MAX_SEQ};
use crate::store::{Record, Store, StoreError};
use crate::telephony::{CallId, CallState, Network, PhoneNumber};
use crate::time::SimTime;

pub const SECONDS_PER_DAY: u64 = 86_400;
pub const MIN_CALL_PERIOD_S: f64 = 60.0;
/// Notification attempts after the first one fails.
pub const NOTIFY_RETRIES: u32 = 3;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("a poll call to the field unit is already in progress")]
    PollInProgress,
    #[error("no alarm with id {0}")]
    UnknownAlarm(u64),
    #[error("invalid schedule config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Seconds between scheduled calls to the field unit.
    #[serde(default = "defaults::call_period")]
    pub call_period: f64,
    pub field_number: PhoneNumber,
    pub server_number: PhoneNumber,
    /// Server-side low battery threshold, V.
    #[serde(default = "defaults::alert_threshold")]
    pub alert_threshold: f64,
    /// Time of the first scheduled call, s.
    #[serde(default = "defaults::first_call_at")]
    pub first_call_at: f64,
    /// The field unit's poll period, used to date the frames of a batch.
    #[serde(default = "defaults::unit_poll_period")]
    pub unit_poll_period: f64,
    /// Wait before redialling a busy or unavailable line, s.
    #[serde(default = "defaults::busy_retry_delay")]
    pub busy_retry_delay: f64,
    #[serde(default = "defaults::busy_retries")]
    pub busy_retries: u32,
    #[serde(default)]
    pub timing: ToneTiming,
}

mod defaults {
    pub fn call_period() -> f64 {
        3600.0
    }
    pub fn alert_threshold() -> f64 {
        11.50
    }
    pub fn first_call_at() -> f64 {
        24.25
    }
    pub fn unit_poll_period() -> f64 {
        30.0
    }
    pub fn busy_retry_delay() -> f64 {
        10.0
    }
    pub fn busy_retries() -> u32 {
        3
    }
}

impl ScheduleConfig {
    pub fn new(field_number: PhoneNumber, server_number: PhoneNumber) -> Self {
        ScheduleConfig {
            call_period: defaults::call_period(),
            field_number,
            server_number,
            alert_threshold: defaults::alert_threshold(),
            first_call_at: defaults::first_call_at(),
            unit_poll_period: defaults::unit_poll_period(),
            busy_retry_delay: defaults::busy_retry_delay(),
            busy_retries: defaults::busy_retries(),
            timing: ToneTiming::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ServerError> {
        let bad = |m: &str| Err(ServerError::InvalidConfig(m.to_string()));
        if !(self.call_period >= MIN_CALL_PERIOD_S) || !self.call_period.is_finite() {
            return bad("call_period must be at least 60 s");
        }
        if !(self.alert_threshold > 0.0) || !self.alert_threshold.is_finite() {
            return bad("alert_threshold must be positive");
        }
        if !(self.first_call_at >= 0.0) || !self.first_call_at.is_finite() {
            return bad("first_call_at must be non-negative");
        }
        if !(self.unit_poll_period > 0.0) {
            return bad("unit_poll_period must be positive");
        }
        if !(self.busy_retry_delay > 0.0) {
            return bad("busy_retry_delay must be positive");
        }
        if self.field_number == self.server_number {
            return bad("field_number and server_number must differ");
        }
        self.timing
            .validate()
            .map_err(|e| ServerError::InvalidConfig(e.to_string()))
    }
}

/// The operator-editable part of [`ScheduleConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigUpdate {
    pub call_period: Option<f64>,
    pub alert_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredReading {
    pub timestamp: SimTime,
    pub seq: u16,
    pub battery_voltage: f64,
    pub source_voltage: f64,
    pub charge_current: f64,
    pub load_current: f64,
    /// kWh
    pub total_energy: f64,
    pub alarm: bool,
    pub call_id: CallId,
    /// Set when the batch's sequence numbers did not increase, so the
    /// timestamp is only a guess from arrival order.
    #[serde(default)]
    pub suspect: bool,
}

impl StoredReading {
    pub const CSV_HEADER: &'static str =
        "timestamp,seq,battery_v,source_v,charge_a,load_a,energy_kwh,alarm,call_id";

    pub fn from_frame(frame: &DataFrame, timestamp: SimTime, call_id: CallId, suspect: bool) -> Self {
        StoredReading {
            timestamp,
            seq: frame.seq,
            battery_voltage: frame.battery_voltage(),
            source_voltage: frame.source_voltage(),
            charge_current: frame.charge_current(),
            load_current: frame.load_current(),
            total_energy: frame.total_kwh(),
            alarm: frame.alarm,
            call_id,
            suspect,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.2},{:.2},{:.2},{:.2},{:.1},{},{}",
            self.timestamp,
            self.seq,
            self.battery_voltage,
            self.source_voltage,
            self.charge_current,
            self.load_current,
            self.total_energy,
            self.alarm as u8,
            self.call_id
        )
    }
}

pub fn readings_csv(readings: &[StoredReading]) -> String {
    let mut out = String::from(StoredReading::CSV_HEADER);
    out.push('\n');
    for r in readings {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Dates a batch of frames that arrived oldest first in one call answered
/// at `answered_at`. The last frame is stamped `answered_at`; each earlier
/// frame sits `(seq gap mod 1000) * poll_period` before its successor.
///
/// If the sequence numbers do not increase, frames are spaced one poll
/// period apart in arrival order and the second value is `true`.
pub fn reconstruct_timestamps(
    seqs: &[u16],
    answered_at: SimTime,
    poll_period: Duration,
) -> (Vec<SimTime>, bool) {
    let modulus = MAX_SEQ as u32 + 1;
    let gaps: Vec<u32> = seqs
        .windows(2)
        .map(|w| (w[1] as u32 + modulus - w[0] as u32) % modulus)
        .collect();
    // A forward step larger than half the counter range reads as going
    // backwards.
    let suspect = gaps.iter().any(|&g| g == 0 || g >= modulus / 2);
    let mut out = vec![answered_at; seqs.len()];
    for i in (0..seqs.len().saturating_sub(1)).rev() {
        let step = if suspect { 1 } else { gaps[i] };
        out[i] = out[i + 1]
            .checked_sub_duration(poll_period * step)
            .unwrap_or(SimTime::ZERO);
    }
    (out, suspect)
}

/// Splits detected symbols into frames at each terminator. A trailing run
/// with no terminator is returned as a fragment too.
pub fn split_frames(symbols: &[DtmfSymbol]) -> Vec<&[DtmfSymbol]> {
    symbols
        .split_inclusive(|s| *s == DtmfSymbol::STAR)
        .filter(|f| !f.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AlarmSource {
    FrameFlag,
    ServerThreshold,
    MissedCall,
}

impl fmt::Display for AlarmSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlarmSource::FrameFlag => "FRAME_FLAG",
            AlarmSource::ServerThreshold => "SERVER_THRESHOLD",
            AlarmSource::MissedCall => "MISSED_CALL",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadingRef {
    pub call_id: CallId,
    pub seq: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NotificationStatus {
    Pending,
    Delivered { attempts: u32 },
    Failed { attempts: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub id: u64,
    pub raised_at: SimTime,
    pub source: AlarmSource,
    pub reading: Option<ReadingRef>,
    /// How many times the condition was seen while this alarm was open.
    pub occurrences: u32,
    pub acknowledged: bool,
    pub acknowledged_by: Option<String>,
    pub notification: NotificationStatus,
}

/// What the sink is asked to deliver for a newly raised alarm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub alarm_id: u64,
    pub source: AlarmSource,
    pub raised_at: SimTime,
    pub message: String,
}

pub trait NotificationSink: Send {
    fn deliver(&mut self, n: &Notification) -> Result<(), String>;
}

/// Sink that keeps delivered notifications in memory.
#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    pub delivered: Vec<Notification>,
}

impl NotificationSink for MemorySink {
    fn deliver(&mut self, n: &Notification) -> Result<(), String> {
        self.delivered.push(n.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallPurpose {
    Scheduled,
    Operator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub call_id: CallId,
    pub purpose: CallPurpose,
    pub placed_at: SimTime,
    pub answered_at: Option<SimTime>,
    pub ended_at: SimTime,
    pub billed_minutes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirtimeLedger {
    pub total_billed_minutes: u64,
    pub calls: usize,
    pub entries: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyAggregates {
    pub day: u64,
    pub readings: usize,
    /// (timestamp, battery voltage)
    pub charge_curve: Vec<(SimTime, f64)>,
    /// (timestamp, charge current)
    pub insolation: Vec<(SimTime, f64)>,
    /// W, time-weighted over the stored points.
    pub average_charge_power: Option<f64>,
    /// kWh, last minus first.
    pub energy_delta: Option<f64>,
    pub insufficient: bool,
}

/// Aggregates over the readings of one day, `[day*86400, (day+1)*86400)`.
pub fn daily_aggregates(readings: &[StoredReading], day: u64) -> DailyAggregates {
    let lo = SimTime::from_secs(day * SECONDS_PER_DAY);
    let hi = SimTime::from_secs((day + 1) * SECONDS_PER_DAY);
    let rs: Vec<&StoredReading> = readings
        .iter()
        .filter(|r| r.timestamp >= lo && r.timestamp < hi)
        .collect();
    let charge_curve = rs.iter().map(|r| (r.timestamp, r.battery_voltage)).collect();
    let insolation = rs.iter().map(|r| (r.timestamp, r.charge_current)).collect();
    let mut report = DailyAggregates {
        day,
        readings: rs.len(),
        charge_curve,
        insolation,
        average_charge_power: None,
        energy_delta: None,
        insufficient: true,
    };
    if rs.len() < 2 {
        return report;
    }
    let span = (rs[rs.len() - 1].timestamp - rs[0].timestamp).as_secs_f64();
    let power = |r: &StoredReading| r.battery_voltage * r.charge_current;
    report.average_charge_power = Some(if span > 0.0 {
        rs.windows(2)
            .map(|w| {
                let dt = (w[1].timestamp - w[0].timestamp).as_secs_f64();
                0.5 * (power(w[0]) + power(w[1])) * dt
            })
            .sum::<f64>()
            / span
    } else {
        rs.iter().map(|r| power(r)).sum::<f64>() / rs.len() as f64
    });
    report.energy_delta = Some(rs[rs.len() - 1].total_energy - rs[0].total_energy);
    report.insufficient = false;
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerEventKind {
    CallStarted {
        call_id: CallId,
        purpose: CallPurpose,
    },
    CallFailed {
        purpose: CallPurpose,
        reason: String,
    },
    CallEnded {
        call_id: CallId,
        answered: bool,
        billed_minutes: u32,
    },
    AlarmCallReceived {
        call_id: CallId,
    },
    ReadingStored {
        reading: StoredReading,
    },
    DecodeFailure {
        call_id: CallId,
        rejected: usize,
        accepted: usize,
        detail: String,
    },
    AlarmRaised {
        alarm: AlarmEvent,
    },
    AlarmCoalesced {
        alarm_id: u64,
        occurrences: u32,
    },
    AlarmAcked {
        alarm: AlarmEvent,
    },
    NotificationResult {
        alarm_id: u64,
        status: NotificationStatus,
    },
    ConfigChanged {
        call_period: f64,
        alert_threshold: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerEvent {
    /// Strictly increasing across the server's lifetime.
    pub id: u64,
    pub t: SimTime,
    #[serde(flatten)]
    pub kind: ServerEventKind,
}

impl ServerEvent {
    pub fn log_line(&self) -> String {
        format!(
            "{} #{} {}",
            self.t,
            self.id,
            serde_json::to_string(&self.kind).expect("events serialize")
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeCounters {
    pub frames_accepted: u64,
    pub frames_rejected: u64,
    pub calls_decoded: u64,
}

#[derive(Debug, Clone)]
struct Outgoing {
    purpose: CallPurpose,
    call: Option<CallId>,
    retries_left: u32,
    retry_at: SimTime,
}

type Observer = Box<dyn FnMut(&ServerEvent) + Send>;

pub struct MonitorServer {
    cfg: ScheduleConfig,
    store: Store,
    sink: Box<dyn NotificationSink>,
    observers: Vec<Observer>,
    events: Vec<ServerEvent>,
    next_event_id: u64,
    next_alarm_id: u64,
    next_call_at: SimTime,
    outgoing: Option<Outgoing>,
    incoming: Vec<CallId>,
    open_condition: BTreeMap<AlarmSource, u64>,
    counters: DecodeCounters,
}

impl fmt::Debug for MonitorServer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MonitorServer")
            .field("cfg", &self.cfg)
            .field("readings", &self.store.readings().len())
            .field("next_call_at", &self.next_call_at)
            .finish_non_exhaustive()
    }
}

impl MonitorServer {
    pub fn new(
        cfg: ScheduleConfig,
        store: Store,
        sink: Box<dyn NotificationSink>,
    ) -> Result<Self, ServerError> {
        cfg.validate()?;
        let next_alarm_id = store.alarms().iter().map(|a| a.id).max().map_or(1, |m| m + 1);
        let next_call_at = SimTime::from_secs_f64(cfg.first_call_at);
        Ok(MonitorServer {
            cfg,
            store,
            sink,
            observers: Vec::new(),
            events: Vec::new(),
            next_event_id: 1,
            next_alarm_id,
            next_call_at,
            outgoing: None,
            incoming: Vec::new(),
            open_condition: BTreeMap::new(),
            counters: DecodeCounters::default(),
        })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.cfg
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn counters(&self) -> DecodeCounters {
        self.counters
    }

    pub fn events(&self) -> &[ServerEvent] {
        &self.events
    }

    pub fn next_call_at(&self) -> SimTime {
        self.next_call_at
    }

    /// Registers a callback run for every event, in order.
    pub fn subscribe(&mut self, f: Observer) {
        self.observers.push(f);
    }

    pub fn poll_in_progress(&self) -> bool {
        self.outgoing.is_some()
    }

    pub fn query_range(&self, from: SimTime, to: SimTime) -> &[StoredReading] {
        self.store.query_range(from, to)
    }

    pub fn daily_aggregates(&self, day: u64) -> DailyAggregates {
        daily_aggregates(self.store.readings(), day)
    }

    pub fn alarms(&self, open: Option<bool>) -> Vec<AlarmEvent> {
        self.store
            .alarms()
            .iter()
            .filter(|a| open.is_none_or(|o| o != a.acknowledged))
            .cloned()
            .collect()
    }

    pub fn ledger(&self) -> AirtimeLedger {
        let entries = self.store.ledger().to_vec();
        AirtimeLedger {
            total_billed_minutes: entries.iter().map(|e| e.billed_minutes as u64).sum(),
            calls: entries.len(),
            entries,
        }
    }

    fn emit(&mut self, t: SimTime, kind: ServerEventKind) {
        let ev = ServerEvent {
            id: self.next_event_id,
            t,
            kind,
        };
        self.next_event_id += 1;
        for f in &mut self.observers {
            f(&ev);
        }
        self.events.push(ev);
    }

    /// Changes the call period and/or alert threshold. A new period applies
    /// from the next scheduled call onwards.
    pub fn update_config(&mut self, update: ConfigUpdate, now: SimTime) -> Result<&ScheduleConfig, ServerError> {
        let mut cfg = self.cfg.clone();
        if let Some(p) = update.call_period {
            cfg.call_period = p;
        }
        if let Some(v) = update.alert_threshold {
            cfg.alert_threshold = v;
        }
        cfg.validate()?;
        if cfg.call_period != self.cfg.call_period {
            let last = self
                .next_call_at
                .checked_sub_duration(Duration::from_secs_f64(self.cfg.call_period));
            self.next_call_at = match last {
                Some(last) if last >= SimTime::from_secs_f64(self.cfg.first_call_at) => {
                    (last + Duration::from_secs_f64(cfg.call_period)).max(now)
                }
                _ => self.next_call_at,
            };
        }
        self.cfg = cfg;
        self.emit(
            now,
            ServerEventKind::ConfigChanged {
                call_period: self.cfg.call_period,
                alert_threshold: self.cfg.alert_threshold,
            },
        );
        Ok(&self.cfg)
    }

    /// Operator-initiated call to the field unit. Returns the call id, or
    /// `None` if the line was busy and a redial is pending.
    pub fn trigger_poll_now(&mut self, net: &mut Network, now: SimTime) -> Result<Option<CallId>, ServerError> {
        if self.outgoing.is_some() {
            return Err(ServerError::PollInProgress);
        }
        self.start_poll(net, CallPurpose::Operator, now)?;
        Ok(self.outgoing.as_ref().and_then(|o| o.call))
    }

    fn start_poll(&mut self, net: &mut Network, purpose: CallPurpose, now: SimTime) -> Result<(), ServerError> {
        self.outgoing = Some(Outgoing {
            purpose,
            call: None,
            retries_left: self.cfg.busy_retries,
            retry_at: now,
        });
        self.dial(net, now)
    }

    fn dial(&mut self, net: &mut Network, now: SimTime) -> Result<(), ServerError> {
        let Some(mut out) = self.outgoing.take() else {
            return Ok(());
        };
        match net.place_call(&self.cfg.server_number, &self.cfg.field_number, now) {
            Ok(id) => {
                out.call = Some(id);
                let purpose = out.purpose;
                self.outgoing = Some(out);
                self.emit(now, ServerEventKind::CallStarted { call_id: id, purpose });
            }
            Err(e) => {
                self.emit(
                    now,
                    ServerEventKind::CallFailed {
                        purpose: out.purpose,
                        reason: e.to_string(),
                    },
                );
                if out.retries_left > 0 {
                    out.retries_left -= 1;
                    out.retry_at = now + Duration::from_secs_f64(self.cfg.busy_retry_delay);
                    self.outgoing = Some(out);
                } else {
                    self.raise(AlarmSource::MissedCall, None, now)?;
                }
            }
        }
        Ok(())
    }

    /// One pass of the server at `now`: finish ended calls, answer alarm
    /// calls, redial, and place the scheduled call when due.
    pub fn tick(&mut self, net: &mut Network, now: SimTime) -> Result<(), ServerError> {
        if let Some(out) = &self.outgoing {
            match out.call {
                Some(id) if net.call_state(id) == Some(CallState::Ended) => {
                    let purpose = out.purpose;
                    self.outgoing = None;
                    self.finish_outgoing(net, id, purpose)?;
                }
                None if out.retry_at <= now => self.dial(net, now)?,
                _ => {}
            }
        }
        let mut still = Vec::new();
        for id in std::mem::take(&mut self.incoming) {
            if net.call_state(id) == Some(CallState::Ended) {
                self.finish_incoming(net, id)?;
            } else {
                still.push(id);
            }
        }
        self.incoming = still;
        if net.take_ring_latch(&self.cfg.server_number) {
            if let Ok(id) = net.press_talk(&self.cfg.server_number, now) {
                self.incoming.push(id);
                self.emit(now, ServerEventKind::AlarmCallReceived { call_id: id });
            }
        }
        while self.next_call_at <= now {
            let slot = self.next_call_at;
            self.next_call_at = slot + Duration::from_secs_f64(self.cfg.call_period);
            if self.outgoing.is_none() {
                self.start_poll(net, CallPurpose::Scheduled, now)?;
            } else {
                self.emit(
                    now,
                    ServerEventKind::CallFailed {
                        purpose: CallPurpose::Scheduled,
                        reason: "previous poll still in progress".into(),
                    },
                );
            }
        }
        Ok(())
    }

    fn finish_outgoing(&mut self, net: &Network, id: CallId, purpose: CallPurpose) -> Result<(), ServerError> {
        let rec = net.record(id).expect("ended call has a record").clone();
        let ended = rec.ended_at.expect("ended call has an end time");
        self.store.append(Record::Ledger(LedgerEntry {
            call_id: id,
            purpose,
            placed_at: rec.placed_at,
            answered_at: rec.answered_at,
            ended_at: ended,
            billed_minutes: rec.billed_minutes,
        }))?;
        self.emit(
            ended,
            ServerEventKind::CallEnded {
                call_id: id,
                answered: rec.answered_at.is_some(),
                billed_minutes: rec.billed_minutes,
            },
        );
        match rec.answered_at {
            None => self.raise(AlarmSource::MissedCall, None, ended),
            Some(answered) => {
                self.open_condition.remove(&AlarmSource::MissedCall);
                self.ingest(net, id, answered, ended)
            }
        }
    }

    fn finish_incoming(&mut self, net: &Network, id: CallId) -> Result<(), ServerError> {
        let rec = net.record(id).expect("ended call has a record").clone();
        let ended = rec.ended_at.expect("ended call has an end time");
        self.emit(
            ended,
            ServerEventKind::CallEnded {
                call_id: id,
                answered: rec.answered_at.is_some(),
                billed_minutes: rec.billed_minutes,
            },
        );
        match rec.answered_at {
            Some(answered) => self.ingest(net, id, answered, ended),
            None => Ok(()),
        }
    }

    /// Decodes what the server heard on a call and stores the good frames.
    fn ingest(&mut self, net: &Network, id: CallId, answered: SimTime, ended: SimTime) -> Result<(), ServerError> {
        let audio = net
            .received_audio(id, &self.cfg.server_number, self.cfg.timing.sample_rate)
            .expect("server was a party to the call");
        let symbols = detect(&audio);
        let mut frames = Vec::new();
        let mut errors: Vec<FrameError> = Vec::new();
        for fragment in split_frames(&symbols) {
            match decode_frame(fragment) {
                Ok(f) => frames.push(f),
                Err(e) => errors.push(e),
            }
        }
        self.counters.calls_decoded += 1;
        self.counters.frames_accepted += frames.len() as u64;
        self.counters.frames_rejected += errors.len() as u64;
        if frames.is_empty() || !errors.is_empty() {
            let detail = errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ");
            self.emit(
                ended,
                ServerEventKind::DecodeFailure {
                    call_id: id,
                    rejected: errors.len(),
                    accepted: frames.len(),
                    detail,
                },
            );
        }
        let seqs: Vec<u16> = frames.iter().map(|f| f.seq).collect();
        let period = Duration::from_secs_f64(self.cfg.unit_poll_period);
        let (stamps, suspect) = reconstruct_timestamps(&seqs, answered, period);
        let mut seen = Vec::new();
        for (frame, t) in frames.iter().zip(stamps) {
            if seen.contains(&frame.seq) {
                continue;
            }
            seen.push(frame.seq);
            let reading = StoredReading::from_frame(frame, t, id, suspect);
            self.store.append(Record::Reading(reading.clone()))?;
            self.emit(ended, ServerEventKind::ReadingStored { reading: reading.clone() });
            self.evaluate_alerts(&reading, ended)?;
        }
        Ok(())
    }

    /// Raises or coalesces alarms for one stored reading.
    pub fn evaluate_alerts(&mut self, reading: &StoredReading, now: SimTime) -> Result<(), ServerError> {
        let r = Some(ReadingRef {
            call_id: reading.call_id,
            seq: reading.seq,
        });
        let checks = [
            (AlarmSource::FrameFlag, reading.alarm),
            (
                AlarmSource::ServerThreshold,
                reading.battery_voltage < self.cfg.alert_threshold,
            ),
        ];
        for (source, active) in checks {
            if active {
                self.raise(source, r, now)?;
            } else {
                self.open_condition.remove(&source);
            }
        }
        Ok(())
    }

    fn raise(&mut self, source: AlarmSource, reading: Option<ReadingRef>, now: SimTime) -> Result<(), ServerError> {
        if let Some(&id) = self.open_condition.get(&source) {
            if let Some(open) = self.store.alarm(id).filter(|a| !a.acknowledged).cloned() {
                let alarm = AlarmEvent {
                    occurrences: open.occurrences + 1,
                    ..open
                };
                let occurrences = alarm.occurrences;
                self.store.append(Record::Alarm(alarm))?;
                self.emit(now, ServerEventKind::AlarmCoalesced { alarm_id: id, occurrences });
                return Ok(());
            }
        }
        let id = self.next_alarm_id;
        self.next_alarm_id += 1;
        let mut alarm = AlarmEvent {
            id,
            raised_at: now,
            source,
            reading,
            occurrences: 1,
            acknowledged: false,
            acknowledged_by: None,
            notification: NotificationStatus::Pending,
        };
        self.open_condition.insert(source, id);
        self.store.append(Record::Alarm(alarm.clone()))?;
        self.emit(now, ServerEventKind::AlarmRaised { alarm: alarm.clone() });

        let note = Notification {
            alarm_id: id,
            source,
            raised_at: now,
            message: match reading {
                Some(r) => format!("{source} alarm from call {} frame {}", r.call_id, r.seq),
                None => format!("{source} alarm: field unit did not answer"),
            },
        };
        let mut attempts = 0;
        let mut delivered = false;
        while attempts <= NOTIFY_RETRIES && !delivered {
            attempts += 1;
            delivered = self.sink.deliver(&note).is_ok();
        }
        alarm.notification = if delivered {
            NotificationStatus::Delivered { attempts }
        } else {
            NotificationStatus::Failed { attempts }
        };
        self.store.append(Record::Alarm(alarm.clone()))?;
        self.emit(
            now,
            ServerEventKind::NotificationResult {
                alarm_id: id,
                status: alarm.notification,
            },
        );
        Ok(())
    }

    /// Acknowledges an alarm. Acknowledging twice keeps the first record.
    pub fn acknowledge(&mut self, id: u64, by: Option<String>, now: SimTime) -> Result<AlarmEvent, ServerError> {
        let alarm = self.store.alarm(id).cloned().ok_or(ServerError::UnknownAlarm(id))?;
        if alarm.acknowledged {
            return Ok(alarm);
        }
        let alarm = AlarmEvent {
            acknowledged: true,
            acknowledged_by: Some(by.unwrap_or_else(|| "operator".to_string())),
            ..alarm
        };
        self.store.append(Record::Alarm(alarm.clone()))?;
        self.emit(now, ServerEventKind::AlarmAcked { alarm: alarm.clone() });
        Ok(alarm)
    }
}
