//! JSON shapes served by the API. Instants are whole simulated seconds,
//! with the exact value alongside in a `_ms` field.

use serde::Serialize;
use serde_json::{json, Value};
use solarlink::server::{
    AirtimeLedger, AlarmEvent, AlarmSource, CallPurpose, DailyAggregates, LedgerEntry,
    Notification, NotificationStatus, ReadingRef, ServerEvent, ServerEventKind, StoredReading,
};
use solarlink::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadingView {
    pub timestamp: u64,
    pub timestamp_ms: u64,
    pub seq: u16,
    pub battery_voltage: f64,
    pub source_voltage: f64,
    pub charge_current: f64,
    pub load_current: f64,
    pub total_energy: f64,
    pub alarm: bool,
    pub call_id: u64,
    pub suspect: bool,
}

impl From<&StoredReading> for ReadingView {
    fn from(r: &StoredReading) -> Self {
        ReadingView {
            timestamp: r.timestamp.as_secs(),
            timestamp_ms: r.timestamp.as_millis(),
            seq: r.seq,
            battery_voltage: r.battery_voltage,
            source_voltage: r.source_voltage,
            charge_current: r.charge_current,
            load_current: r.load_current,
            total_energy: r.total_energy,
            alarm: r.alarm,
            call_id: r.call_id,
            suspect: r.suspect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlarmView {
    pub id: u64,
    pub raised_at: u64,
    pub raised_at_ms: u64,
    pub source: AlarmSource,
    pub reading: Option<ReadingRef>,
    pub occurrences: u32,
    pub acknowledged: bool,
    pub acknowledged_by: Option<String>,
    pub notification: NotificationStatus,
}

impl From<&AlarmEvent> for AlarmView {
    fn from(a: &AlarmEvent) -> Self {
        AlarmView {
            id: a.id,
            raised_at: a.raised_at.as_secs(),
            raised_at_ms: a.raised_at.as_millis(),
            source: a.source,
            reading: a.reading,
            occurrences: a.occurrences,
            acknowledged: a.acknowledged,
            acknowledged_by: a.acknowledged_by.clone(),
            notification: a.notification,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerEntryView {
    pub call_id: u64,
    pub purpose: CallPurpose,
    pub placed_at: u64,
    pub answered_at: Option<u64>,
    pub ended_at: u64,
    pub billed_minutes: u32,
}

impl From<&LedgerEntry> for LedgerEntryView {
    fn from(e: &LedgerEntry) -> Self {
        LedgerEntryView {
            call_id: e.call_id,
            purpose: e.purpose,
            placed_at: e.placed_at.as_secs(),
            answered_at: e.answered_at.map(SimTime::as_secs),
            ended_at: e.ended_at.as_secs(),
            billed_minutes: e.billed_minutes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerView {
    pub total_billed_minutes: u64,
    pub calls: usize,
    pub entries: Vec<LedgerEntryView>,
}

impl From<&AirtimeLedger> for LedgerView {
    fn from(l: &AirtimeLedger) -> Self {
        LedgerView {
            total_billed_minutes: l.total_billed_minutes,
            calls: l.calls,
            entries: l.entries.iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatesView {
    pub day: u64,
    pub readings: usize,
    /// [seconds, volts]
    pub charge_curve: Vec<(u64, f64)>,
    /// [seconds, amps]
    pub insolation: Vec<(u64, f64)>,
    pub average_charge_power: Option<f64>,
    pub energy_delta: Option<f64>,
    pub insufficient: bool,
}

impl From<&DailyAggregates> for AggregatesView {
    fn from(a: &DailyAggregates) -> Self {
        let series = |s: &[(SimTime, f64)]| s.iter().map(|(t, v)| (t.as_secs(), *v)).collect();
        AggregatesView {
            day: a.day,
            readings: a.readings,
            charge_curve: series(&a.charge_curve),
            insolation: series(&a.insolation),
            average_charge_power: a.average_charge_power,
            energy_delta: a.energy_delta,
            insufficient: a.insufficient,
        }
    }
}

pub fn notification(n: &Notification) -> Value {
    json!({
        "alarm_id": n.alarm_id,
        "source": n.source,
        "raised_at": n.raised_at.as_secs(),
        "raised_at_ms": n.raised_at.as_millis(),
        "message": n.message,
    })
}

/// Event-stream name for an event, e.g. `reading_stored`.
pub fn event_name(e: &ServerEvent) -> &'static str {
    match e.kind {
        ServerEventKind::CallStarted { .. } => "call_started",
        ServerEventKind::CallFailed { .. } => "call_failed",
        ServerEventKind::CallEnded { .. } => "call_ended",
        ServerEventKind::AlarmCallReceived { .. } => "alarm_call_received",
        ServerEventKind::ReadingStored { .. } => "reading_stored",
        ServerEventKind::DecodeFailure { .. } => "decode_failure",
        ServerEventKind::AlarmRaised { .. } => "alarm_raised",
        ServerEventKind::AlarmCoalesced { .. } => "alarm_coalesced",
        ServerEventKind::AlarmAcked { .. } => "alarm_acked",
        ServerEventKind::NotificationResult { .. } => "notification_result",
        ServerEventKind::ConfigChanged { .. } => "config_changed",
    }
}

pub fn event(e: &ServerEvent) -> Value {
    let mut body = match &e.kind {
        ServerEventKind::ReadingStored { reading } => {
            json!({ "reading": ReadingView::from(reading) })
        }
        ServerEventKind::AlarmRaised { alarm } | ServerEventKind::AlarmAcked { alarm } => {
            json!({ "alarm": AlarmView::from(alarm) })
        }
        other => {
            let mut v = serde_json::to_value(other).expect("events serialize");
            if let Some(m) = v.as_object_mut() {
                m.remove("type");
            }
            v
        }
    };
    let m = body.as_object_mut().expect("event bodies are objects");
    m.insert("id".into(), e.id.into());
    m.insert("type".into(), event_name(e).into());
    m.insert("t".into(), e.t.as_secs().into());
    m.insert("t_ms".into(), e.t.as_millis().into());
    body
}
