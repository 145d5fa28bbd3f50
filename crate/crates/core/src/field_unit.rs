//! Field unit firmware: boots the handset, polls the controller on a fixed
//! period, keeps a short frame queue, raises low-voltage alarm calls and
//! keys queued frames into incoming calls.
//!
//! The unit is advanced by [`FieldUnit::tick`] once per loop tick. Each tick
//! does at most one of: continue the job in progress, answer a ring, or run
//! a poll cycle. A poll cycle and a transmission never overlap.

use std::collections::VecDeque;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dtmf::{encode_frame, symbols_to_string, DataFrame, DtmfSymbol, ToneTiming, MAX_SEQ};
use crate::protocol::{ControllerLink, ControllerReading, LinkConfig};
use crate::telephony::{CallId, CallState, Network, PhoneNumber, TelephonyError, POWER_HOLD};
use crate::time::SimTime;

/// Time between going off-hook and the first key press.
pub const ANSWER_SETTLE: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnitConfigError {
    #[error("poll_period must be positive")]
    PollPeriod,
    #[error("loop_tick must be positive and shorter than poll_period")]
    LoopTick,
    #[error("lv_threshold must be positive")]
    Threshold,
    #[error("max_frames_per_call must be at least 1")]
    MaxFrames,
    #[error("invalid tone timing: {0}")]
    Timing(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldUnitConfig {
    /// Seconds between poll cycles.
    #[serde(default = "defaults::poll_period")]
    pub poll_period: f64,
    /// Seconds per pass of the main loop.
    #[serde(default = "defaults::loop_tick")]
    pub loop_tick: f64,
    /// Battery voltage below which every poll cycle places an alarm call.
    #[serde(default = "defaults::lv_threshold")]
    pub lv_threshold: f64,
    pub alarm_number: PhoneNumber,
    pub own_number: PhoneNumber,
    #[serde(default = "defaults::max_frames_per_call")]
    pub max_frames_per_call: usize,
    #[serde(default = "defaults::stored_queue_capacity")]
    pub stored_queue_capacity: usize,
    #[serde(default)]
    pub timing: ToneTiming,
    #[serde(default)]
    pub link: LinkConfig,
}

mod defaults {
    pub fn poll_period() -> f64 {
        30.0
    }
    pub fn loop_tick() -> f64 {
        0.25
    }
    pub fn lv_threshold() -> f64 {
        11.50
    }
    pub fn max_frames_per_call() -> usize {
        3
    }
    pub fn stored_queue_capacity() -> usize {
        2
    }
}

impl FieldUnitConfig {
    pub fn new(own_number: PhoneNumber, alarm_number: PhoneNumber) -> Self {
        FieldUnitConfig {
            poll_period: defaults::poll_period(),
            loop_tick: defaults::loop_tick(),
            lv_threshold: defaults::lv_threshold(),
            alarm_number,
            own_number,
            max_frames_per_call: defaults::max_frames_per_call(),
            stored_queue_capacity: defaults::stored_queue_capacity(),
            timing: ToneTiming::default(),
            link: LinkConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), UnitConfigError> {
        if !(self.poll_period > 0.0) {
            return Err(UnitConfigError::PollPeriod);
        }
        if !(self.loop_tick > 0.0 && self.loop_tick < self.poll_period) {
            return Err(UnitConfigError::LoopTick);
        }
        if !(self.lv_threshold > 0.0) {
            return Err(UnitConfigError::Threshold);
        }
        if self.max_frames_per_call == 0 {
            return Err(UnitConfigError::MaxFrames);
        }
        self.timing
            .validate()
            .map_err(|e| UnitConfigError::Timing(e.to_string()))
    }

    pub fn poll_period_duration(&self) -> Duration {
        Duration::from_secs_f64(self.poll_period)
    }

    pub fn loop_tick_duration(&self) -> Duration {
        Duration::from_secs_f64(self.loop_tick)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Booting,
    Idle,
    Polling,
    Transmitting,
    AlarmCalling,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Booting => "BOOTING",
            Mode::Idle => "IDLE",
            Mode::Polling => "POLLING",
            Mode::Transmitting => "TRANSMITTING",
            Mode::AlarmCalling => "ALARM_CALLING",
        };
        f.write_str(s)
    }
}

/// Converts a controller reading into a frame, rounding to the frame's
/// fixed-point units.
pub fn frame_from_reading(reading: &ControllerReading, seq: u16, alarm: bool) -> DataFrame {
    fn fixed(x: f64, scale: f64) -> u32 {
        (x * scale).round().clamp(0.0, 999_999.0) as u32
    }
    DataFrame {
        alarm,
        seq,
        battery_cv: fixed(reading.battery_voltage, 100.0),
        source_cv: fixed(reading.source_voltage, 100.0),
        charge_ca: fixed(reading.charge_current, 100.0),
        load_ca: fixed(reading.load_current, 100.0),
        energy_dkwh: fixed(reading.total_energy, 10.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitEventKind {
    Boot,
    Ready,
    Poll,
    PollFailed,
    Enqueue,
    Evict,
    Answer,
    TransmitFrame,
    TransmitPartial,
    HangUp,
    AlarmCall,
    AlarmCallFailed,
}

impl fmt::Display for UnitEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            UnitEventKind::Boot => "boot",
            UnitEventKind::Ready => "ready",
            UnitEventKind::Poll => "poll",
            UnitEventKind::PollFailed => "poll-failed",
            UnitEventKind::Enqueue => "enqueue",
            UnitEventKind::Evict => "evict",
            UnitEventKind::Answer => "answer",
            UnitEventKind::TransmitFrame => "transmit-frame",
            UnitEventKind::TransmitPartial => "transmit-partial",
            UnitEventKind::HangUp => "hang-up",
            UnitEventKind::AlarmCall => "alarm-call",
            UnitEventKind::AlarmCallFailed => "alarm-call-failed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitEvent {
    pub t: SimTime,
    pub kind: UnitEventKind,
    pub seq: Option<u16>,
    pub detail: String,
}

impl UnitEvent {
    pub const CSV_HEADER: &'static str = "t,event,seq,detail";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.t,
            self.kind,
            self.seq.map(|s| s.to_string()).unwrap_or_default(),
            self.detail
        )
    }
}

/// Frames keyed into one call, with the time each key goes down.
#[derive(Debug, Clone)]
struct KeyPlan {
    call: CallId,
    keys: Vec<(SimTime, DtmfSymbol)>,
    /// Per frame: seq, index one past its last key, time its trailing gap ends.
    frames: Vec<(u16, usize, SimTime)>,
    next_key: usize,
    next_frame: usize,
    hang_up_at: SimTime,
}

impl KeyPlan {
    fn new(call: CallId, answered_at: SimTime, frames: &[DataFrame], timing: &ToneTiming) -> Self {
        let period = timing.symbol_period();
        let mut t = answered_at + ANSWER_SETTLE;
        let mut keys = Vec::new();
        let mut spans = Vec::new();
        for f in frames {
            let symbols = encode_frame(f).expect("queued frames are valid");
            for s in symbols {
                keys.push((t, s));
                t += period;
            }
            spans.push((f.seq, keys.len(), t));
        }
        KeyPlan {
            call,
            keys,
            frames: spans,
            next_key: 0,
            next_frame: 0,
            hang_up_at: t,
        }
    }
}

#[derive(Debug, Clone)]
enum Job {
    None,
    Polling { until: SimTime, alarm: Option<SimTime> },
    Ringing { call: CallId, frame: DataFrame },
    Keying(KeyPlan),
}

/// Snapshot of the firmware's externally visible state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitState {
    pub mode: Mode,
    /// Oldest first.
    pub stored: Vec<DataFrame>,
    pub current: Option<DataFrame>,
    pub next_seq: u16,
    pub last_poll_at: Option<SimTime>,
    pub alarm_active: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitCounters {
    pub polls: u64,
    pub poll_faults: u64,
    pub frames_sent: u64,
    pub partial_frames: u64,
    pub calls_answered: u64,
    pub alarm_calls: u64,
    pub alarm_calls_failed: u64,
}

#[derive(Debug, Clone)]
pub struct FieldUnit {
    cfg: FieldUnitConfig,
    mode: Mode,
    ready_at: SimTime,
    stored: VecDeque<DataFrame>,
    current: Option<DataFrame>,
    next_seq: u16,
    last_poll_at: Option<SimTime>,
    alarm_active: bool,
    job: Job,
    counters: UnitCounters,
    log: Vec<UnitEvent>,
}

impl FieldUnit {
    /// Presses POWER for the hold time and waits out the handset boot. The
    /// unit becomes ready, and polls for the first time, at the returned
    /// unit's `ready_at`.
    pub fn boot(
        cfg: FieldUnitConfig,
        net: &mut Network,
        now: SimTime,
    ) -> Result<FieldUnit, TelephonyError> {
        net.hold_power_key(&cfg.own_number, POWER_HOLD, now)?;
        let ready_at = now + POWER_HOLD + crate::telephony::BOOT_TIME;
        let mut unit = FieldUnit {
            cfg,
            mode: Mode::Booting,
            ready_at,
            stored: VecDeque::new(),
            current: None,
            next_seq: 0,
            last_poll_at: None,
            alarm_active: false,
            job: Job::None,
            counters: UnitCounters::default(),
            log: Vec::new(),
        };
        unit.emit(now, UnitEventKind::Boot, None, String::new());
        Ok(unit)
    }

    pub fn config(&self) -> &FieldUnitConfig {
        &self.cfg
    }

    pub fn ready_at(&self) -> SimTime {
        self.ready_at
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn counters(&self) -> UnitCounters {
        self.counters
    }

    pub fn events(&self) -> &[UnitEvent] {
        &self.log
    }

    pub fn state(&self) -> UnitState {
        UnitState {
            mode: self.mode,
            stored: self.stored.iter().cloned().collect(),
            current: self.current,
            next_seq: self.next_seq,
            last_poll_at: self.last_poll_at,
            alarm_active: self.alarm_active,
        }
    }

    /// Frames waiting for a call, oldest first.
    pub fn queue(&self) -> Vec<DataFrame> {
        self.stored.iter().chain(self.current.iter()).cloned().collect()
    }

    pub fn write_event_log<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", UnitEvent::CSV_HEADER)?;
        for e in &self.log {
            writeln!(w, "{}", e.csv_row())?;
        }
        Ok(())
    }

    fn emit(&mut self, t: SimTime, kind: UnitEventKind, seq: Option<u16>, detail: String) {
        self.log.push(UnitEvent { t, kind, seq, detail });
    }

    /// One pass of the main loop at `now`.
    pub fn tick(&mut self, net: &mut Network, link: &mut dyn ControllerLink, now: SimTime) {
        if self.mode == Mode::Booting {
            if now < self.ready_at {
                return;
            }
            self.mode = Mode::Idle;
            self.emit(self.ready_at, UnitEventKind::Ready, None, String::new());
        }
        if !self.advance_job(net, now) {
            return;
        }
        if net.take_ring_latch(&self.cfg.own_number) {
            self.answer(net, now);
            self.advance_job(net, now);
            return;
        }
        let due = match self.last_poll_at {
            None => true,
            Some(t) => now.saturating_sub(t) >= self.cfg.poll_period_duration(),
        };
        if due {
            self.poll_and_validate(link, now);
            self.advance_job(net, now);
        }
    }

    /// Continues the job in progress. Returns whether the unit is free.
    fn advance_job(&mut self, net: &mut Network, now: SimTime) -> bool {
        loop {
            match std::mem::replace(&mut self.job, Job::None) {
                Job::None => {
                    self.mode = Mode::Idle;
                    return true;
                }
                Job::Polling { until, alarm } => {
                    if now < until {
                        self.job = Job::Polling { until, alarm };
                        return false;
                    }
                    if let Some(at) = alarm {
                        self.place_alarm_call(net, at);
                    }
                }
                Job::Ringing { call, frame } => match net.call_state(call) {
                    Some(CallState::Ringing) => {
                        self.job = Job::Ringing { call, frame };
                        return false;
                    }
                    Some(CallState::Active) => {
                        let answered = net
                            .record(call)
                            .and_then(|r| r.answered_at)
                            .expect("active calls are answered");
                        self.mode = Mode::Transmitting;
                        self.job = Job::Keying(KeyPlan::new(
                            call,
                            answered,
                            std::slice::from_ref(&frame),
                            &self.cfg.timing,
                        ));
                    }
                    _ => {
                        self.counters.alarm_calls_failed += 1;
                        let reason = net
                            .record(call)
                            .and_then(|r| r.end_reason)
                            .map(|r| format!("{r:?}"))
                            .unwrap_or_default();
                        let at = net.record(call).and_then(|r| r.ended_at).unwrap_or(now);
                        self.emit(at, UnitEventKind::AlarmCallFailed, Some(frame.seq), reason);
                    }
                },
                Job::Keying(mut plan) => {
                    if !self.key(net, &mut plan, now) {
                        self.job = Job::Keying(plan);
                        return false;
                    }
                }
            }
        }
    }

    /// Presses the keys due by `now`. Returns true once the call is over.
    fn key(&mut self, net: &mut Network, plan: &mut KeyPlan, now: SimTime) -> bool {
        let ended_at = |net: &Network| net.record(plan.call).and_then(|r| r.ended_at);
        while plan.next_key < plan.keys.len() && plan.keys[plan.next_key].0 <= now {
            let (t, symbol) = plan.keys[plan.next_key];
            if ended_at(net).is_some_and(|e| e <= t) {
                break;
            }
            net.press_dtmf_key(&self.cfg.own_number, symbol, &self.cfg.timing, t)
                .expect("own handset is registered");
            plan.next_key += 1;
        }
        while plan.next_frame < plan.frames.len() {
            let (seq, end_key, gap_end) = plan.frames[plan.next_frame];
            if plan.next_key < end_key || gap_end > now {
                break;
            }
            if ended_at(net).is_some_and(|e| e < gap_end) {
                break;
            }
            let symbols: Vec<DtmfSymbol> = plan.keys[end_key - frame_len(plan, plan.next_frame)..end_key]
                .iter()
                .map(|(_, s)| *s)
                .collect();
            self.delivered(seq);
            self.counters.frames_sent += 1;
            self.emit(gap_end, UnitEventKind::TransmitFrame, Some(seq), symbols_to_string(&symbols));
            plan.next_frame += 1;
        }
        if let Some(end) = ended_at(net) {
            // Dropped by the network before the plan finished.
            let start_key = if plan.next_frame == 0 {
                0
            } else {
                plan.frames[plan.next_frame - 1].1
            };
            if plan.next_key > start_key {
                let symbols: Vec<DtmfSymbol> =
                    plan.keys[start_key..plan.next_key].iter().map(|(_, s)| *s).collect();
                self.counters.partial_frames += 1;
                let seq = plan.frames[plan.next_frame].0;
                self.emit(end, UnitEventKind::TransmitPartial, Some(seq), symbols_to_string(&symbols));
            }
            self.emit(end, UnitEventKind::HangUp, None, "dropped".into());
            return true;
        }
        if now >= plan.hang_up_at {
            net.hang_up(plan.call, plan.hang_up_at)
                .expect("call is live until hung up");
            self.emit(plan.hang_up_at, UnitEventKind::HangUp, None, String::new());
            return true;
        }
        false
    }

    fn delivered(&mut self, seq: u16) {
        if let Some(i) = self.stored.iter().position(|f| f.seq == seq) {
            self.stored.remove(i);
        } else if self.current.as_ref().is_some_and(|f| f.seq == seq) {
            self.current = None;
        }
    }

    /// Off-hook on a latched ring, then keys the queue oldest first.
    fn answer(&mut self, net: &mut Network, now: SimTime) {
        let call = match net.press_talk(&self.cfg.own_number, now) {
            Ok(id) => id,
            // The caller gave up between the ring and this tick.
            Err(_) => return,
        };
        self.counters.calls_answered += 1;
        let frames: Vec<DataFrame> = self
            .queue()
            .into_iter()
            .take(self.cfg.max_frames_per_call)
            .collect();
        self.emit(now, UnitEventKind::Answer, None, format!("call {call}"));
        self.mode = Mode::Transmitting;
        self.job = Job::Keying(KeyPlan::new(call, now, &frames, &self.cfg.timing));
    }

    /// Queues the previous reading, polls a new one and checks it against
    /// the low-voltage threshold.
    pub fn poll_and_validate(&mut self, link: &mut dyn ControllerLink, now: SimTime) {
        self.last_poll_at = Some(now);
        let seq = self.next_seq;
        self.next_seq = if seq >= MAX_SEQ { 0 } else { seq + 1 };
        self.counters.polls += 1;
        let polled = match link.poll(&self.cfg.link, now) {
            Ok(p) => p,
            Err(e) => {
                self.counters.poll_faults += 1;
                self.emit(now, UnitEventKind::PollFailed, Some(seq), e.to_string());
                self.finish_poll(now, e.elapsed, None);
                return;
            }
        };
        let reading = polled.reading;
        self.alarm_active = reading.battery_voltage < self.cfg.lv_threshold;
        let frame = frame_from_reading(&reading, seq, self.alarm_active);
        self.emit(
            now,
            UnitEventKind::Poll,
            Some(seq),
            format!("{:.2}V", reading.battery_voltage),
        );
        if let Some(prev) = self.current.take() {
            if self.stored.len() >= self.cfg.stored_queue_capacity {
                if let Some(old) = self.stored.pop_front() {
                    self.emit(now, UnitEventKind::Evict, Some(old.seq), String::new());
                }
            }
            if self.cfg.stored_queue_capacity > 0 {
                self.stored.push_back(prev);
            }
        }
        self.emit(now, UnitEventKind::Enqueue, Some(seq), String::new());
        self.current = Some(frame);
        let done = now + polled.elapsed;
        self.finish_poll(now, polled.elapsed, self.alarm_active.then_some(done));
    }

    fn finish_poll(&mut self, now: SimTime, elapsed: Duration, alarm: Option<SimTime>) {
        self.mode = Mode::Polling;
        self.job = Job::Polling {
            until: now + elapsed,
            alarm,
        };
    }

    fn place_alarm_call(&mut self, net: &mut Network, at: SimTime) {
        let Some(frame) = self.current else {
            return;
        };
        self.counters.alarm_calls += 1;
        match net.place_call(&self.cfg.own_number, &self.cfg.alarm_number, at) {
            Ok(call) => {
                self.emit(at, UnitEventKind::AlarmCall, Some(frame.seq), format!("call {call}"));
                self.mode = Mode::AlarmCalling;
                self.job = Job::Ringing { call, frame };
            }
            Err(e) => {
                self.counters.alarm_calls_failed += 1;
                self.emit(at, UnitEventKind::AlarmCall, Some(frame.seq), String::new());
                self.emit(at, UnitEventKind::AlarmCallFailed, Some(frame.seq), e.to_string());
            }
        }
    }
}

fn frame_len(plan: &KeyPlan, i: usize) -> usize {
    let start = if i == 0 { 0 } else { plan.frames[i - 1].1 };
    plan.frames[i].1 - start
}
