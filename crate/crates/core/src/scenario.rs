//! End-to-end scenarios on one simulated clock.
//!
//! A [`Simulation`] owns every part of the system and advances it in loop
//! ticks: plant steps up to the tick, the controller snapshots the plant,
//! the network settles, the server acts, then the field unit acts.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{snapshot, ControllerConfig, SimulatedController};
use crate::field_unit::{FieldUnit, FieldUnitConfig, UnitConfigError, UnitEventKind};
use crate::plant::{self, LoadWindow, PlantConfig, PlantError, PlantState};
use crate::protocol::ModbusLink;
use crate::server::{
    readings_csv, AlarmSource, MemorySink, MonitorServer, NotificationSink, ScheduleConfig,
    ServerError, ServerEventKind,
};
use crate::store::{Store, StoreError};
use crate::telephony::{CallRecord, Handset, Network, NetworkConfig, PhoneNumber, TelephonyError};
use crate::time::SimTime;

pub const BUILTIN_NAMES: [&str; 4] = ["nominal-day", "overload-day", "noisy-channel", "lossy-poll"];

const PLANT_STEP_S: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario '{0}' (try `list`)")]
    Unknown(String),
    #[error("cannot parse scenario file {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Unit(#[from] UnitConfigError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Telephony(#[from] TelephonyError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Faults {
    /// Fraction of controller replies lost on the serial line.
    #[serde(default)]
    pub response_drop_rate: f64,
    /// Fraction of controller replies with a flipped bit.
    #[serde(default)]
    pub response_corrupt_rate: f64,
    /// Chance that an answered call is cut off by the network.
    #[serde(default)]
    pub call_drop_probability: f64,
    /// Controller reply latency, ms.
    #[serde(default = "default_latency")]
    pub response_latency_ms: u64,
}

fn default_latency() -> u64 {
    ControllerConfig::default().response_latency_ms
}

impl Default for Faults {
    fn default() -> Self {
        Faults {
            response_drop_rate: 0.0,
            response_corrupt_rate: 0.0,
            call_drop_probability: 0.0,
            response_latency_ms: default_latency(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Simulated seconds.
    pub duration: f64,
    pub seed: u64,
    /// Signal-to-noise ratio of the voice channel, dB. Absent means clean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_snr_db: Option<f64>,
    /// Seconds between rows of the plant truth log.
    #[serde(default = "default_plant_log_interval")]
    pub plant_log_interval: f64,
    #[serde(default)]
    pub faults: Faults,
    #[serde(default)]
    pub plant: PlantConfig,
    pub unit: FieldUnitConfig,
    pub schedule: ScheduleConfig,
}

fn default_plant_log_interval() -> f64 {
    10.0
}

fn rate_ok(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return bad("duration must be positive".into());
        }
        if !(self.plant_log_interval > 0.0) {
            return bad("plant_log_interval must be positive".into());
        }
        for (name, v) in [
            ("response_drop_rate", self.faults.response_drop_rate),
            ("response_corrupt_rate", self.faults.response_corrupt_rate),
            ("call_drop_probability", self.faults.call_drop_probability),
        ] {
            if !rate_ok(v) {
                return bad(format!("{name} must be in [0, 1]"));
            }
        }
        if self.channel_snr_db.is_some_and(|s| !s.is_finite()) {
            return bad("channel_snr_db must be finite".into());
        }
        self.plant.validate()?;
        self.unit.validate()?;
        self.schedule.validate()?;
        if self.unit.own_number != self.schedule.field_number {
            return bad("unit.own_number must equal schedule.field_number".into());
        }
        if (self.unit.poll_period - self.schedule.unit_poll_period).abs() > 1e-9 {
            return bad("schedule.unit_poll_period must equal unit.poll_period".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|source| ScenarioError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenarios serialize")
    }

    /// A built-in scenario by name, or a scenario file path.
    pub fn resolve(name_or_path: &str) -> Result<Self, ScenarioError> {
        if let Some(s) = builtin(name_or_path) {
            return Ok(s);
        }
        let path = Path::new(name_or_path);
        if path.is_file() {
            let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            return Scenario::from_toml(&text, path);
        }
        Err(ScenarioError::Unknown(name_or_path.to_string()))
    }
}

pub fn field_number() -> PhoneNumber {
    PhoneNumber::new("5550100").expect("static number")
}

pub fn server_number() -> PhoneNumber {
    PhoneNumber::new("5550199").expect("static number")
}

fn base(name: &str, description: &str) -> Scenario {
    Scenario {
        name: name.to_string(),
        description: description.to_string(),
        duration: 86_400.0,
        seed: 1,
        channel_snr_db: None,
        plant_log_interval: default_plant_log_interval(),
        faults: Faults::default(),
        plant: PlantConfig {
            load_schedule: vec![
                LoadWindow {
                    start_s: 0.0,
                    end_s: 86_400.0,
                    amps: 1.0,
                },
                LoadWindow {
                    start_s: 18.0 * 3600.0,
                    end_s: 22.0 * 3600.0,
                    amps: 1.0,
                },
            ],
            ..PlantConfig::default()
        },
        unit: FieldUnitConfig::new(field_number(), server_number()),
        schedule: ScheduleConfig::new(field_number(), server_number()),
    }
}

/// The named built-in scenario.
pub fn builtin(name: &str) -> Option<Scenario> {
    Some(match name {
        "nominal-day" => base(
            "nominal-day",
            "clear day, light load; hourly calls, no alarms expected",
        ),
        "overload-day" => {
            let mut s = base(
                "overload-day",
                "small battery with a heavy evening load; the battery sags below the \
                 low-voltage threshold under load and recovers when the load drops",
            );
            s.plant.battery_capacity = 60.0;
            s.plant.battery_internal_resistance = 0.05;
            s.plant.array_rated_current = 12.0;
            s.plant.initial_soc = 0.5;
            s.plant.cloud_depth = 0.3;
            s.plant.load_schedule = vec![
                LoadWindow {
                    start_s: 0.0,
                    end_s: 86_400.0,
                    amps: 1.0,
                },
                LoadWindow {
                    start_s: 17.0 * 3600.0,
                    end_s: 22.0 * 3600.0,
                    amps: 9.0,
                },
            ];
            s
        }
        "noisy-channel" => {
            let mut s = base("noisy-channel", "nominal day over a 20 dB voice channel");
            s.channel_snr_db = Some(20.0);
            s
        }
        "lossy-poll" => {
            let mut s = base(
                "lossy-poll",
                "nominal day with a flaky serial line: 30% of controller replies lost, 5% corrupted",
            );
            s.faults.response_drop_rate = 0.3;
            s.faults.response_corrupt_rate = 0.05;
            s
        }
        _ => return None,
    })
}

pub fn list() -> Vec<(&'static str, String)> {
    BUILTIN_NAMES
        .iter()
        .map(|n| (*n, builtin(n).expect("listed names exist").description))
        .collect()
}

pub fn describe(name: &str) -> Result<String, ScenarioError> {
    builtin(name)
        .map(|s| s.to_toml())
        .ok_or_else(|| ScenarioError::Unknown(name.to_string()))
}

/// Every part of the system on one clock.
pub struct Simulation {
    scenario: Scenario,
    plant: PlantState,
    plant_log: Vec<PlantState>,
    next_plant_log: f64,
    link: ModbusLink<SimulatedController>,
    net: Network,
    unit: FieldUnit,
    server: MonitorServer,
    now: SimTime,
    started: bool,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("scenario", &self.scenario.name)
            .field("now", &self.now)
            .finish_non_exhaustive()
    }
}

impl Simulation {
    pub fn new(scenario: Scenario, store: Store, sink: Box<dyn NotificationSink>) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let seed = scenario.seed;
        let controller = SimulatedController::new(
            ControllerConfig {
                response_latency_ms: scenario.faults.response_latency_ms,
                drop_rate: scenario.faults.response_drop_rate,
                corrupt_rate: scenario.faults.response_corrupt_rate,
            },
            seed,
        );
        let mut net = Network::new(
            NetworkConfig {
                call_drop_probability: scenario.faults.call_drop_probability,
                ..NetworkConfig::default()
            },
            seed,
        );
        let mut field = Handset::new(scenario.unit.own_number.clone());
        field.noise_snr_db = scenario.channel_snr_db;
        net.register(field)?;
        let mut server_line = Handset::always_on(scenario.schedule.server_number.clone());
        server_line.noise_snr_db = scenario.channel_snr_db;
        net.register(server_line)?;
        let unit = FieldUnit::boot(scenario.unit.clone(), &mut net, SimTime::ZERO)?;
        let server = MonitorServer::new(scenario.schedule.clone(), store, sink)?;
        let plant = scenario.plant.initial_state();
        Ok(Simulation {
            plant_log: vec![plant.clone()],
            next_plant_log: scenario.plant_log_interval,
            plant,
            link: ModbusLink::new(controller),
            net,
            unit,
            server,
            now: SimTime::ZERO,
            started: false,
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn plant(&self) -> &PlantState {
        &self.plant
    }

    pub fn plant_log(&self) -> &[PlantState] {
        &self.plant_log
    }

    pub fn unit(&self) -> &FieldUnit {
        &self.unit
    }

    pub fn server(&self) -> &MonitorServer {
        &self.server
    }

    pub fn server_mut(&mut self) -> &mut MonitorServer {
        &mut self.server
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn controller(&self) -> &SimulatedController {
        self.link.transport()
    }

    pub fn end_time(&self) -> SimTime {
        SimTime::from_secs_f64(self.scenario.duration)
    }

    pub fn tick_len(&self) -> Duration {
        self.scenario.unit.loop_tick_duration()
    }

    pub fn finished(&self) -> bool {
        self.started && self.now + self.tick_len() > self.end_time()
    }

    /// Operator-initiated poll at the current simulated time.
    pub fn trigger_poll_now(&mut self) -> Result<Option<u64>, ServerError> {
        self.server.trigger_poll_now(&mut self.net, self.now)
    }

    /// Advances to the next tick (the first call runs tick zero).
    pub fn step(&mut self) -> Result<(), ScenarioError> {
        if self.started {
            self.now += self.tick_len();
        }
        self.started = true;
        let now = self.now;
        let t = now.as_secs_f64();
        while self.plant.t + PLANT_STEP_S <= t + 1e-9 {
            self.plant = plant::step(&self.scenario.plant, &self.plant, PLANT_STEP_S)?;
            if self.plant.t + 1e-9 >= self.next_plant_log {
                self.plant_log.push(self.plant.clone());
                self.next_plant_log += self.scenario.plant_log_interval;
            }
        }
        self.link.transport_mut().set_registers(snapshot(&self.plant));
        self.net.advance(now);
        self.server.tick(&mut self.net, now)?;
        self.unit.tick(&mut self.net, &mut self.link, now);
        Ok(())
    }

    /// Runs every remaining tick up to the scenario's duration.
    pub fn run_to_end(&mut self) -> Result<(), ScenarioError> {
        while !self.finished() {
            self.step()?;
        }
        Ok(())
    }

    pub fn call_records(&self) -> Vec<CallRecord> {
        self.net.records().cloned().collect()
    }

    pub fn summary(&self) -> Summary {
        let calls = self.call_records();
        let unit_no = &self.scenario.unit.own_number;
        let alarm_call_minutes = calls
            .iter()
            .filter(|c| &c.billed_party == unit_no)
            .map(|c| c.billed_minutes as u64)
            .sum();
        let ledger = self.server.ledger();
        let uc = self.unit.counters();
        let dc = self.server.counters();
        let alarms = self.server.alarms(None);
        let count = |s: AlarmSource| alarms.iter().filter(|a| a.source == s).count();
        let first_alarm_call = self
            .unit
            .events()
            .iter()
            .find(|e| e.kind == UnitEventKind::AlarmCall)
            .map(|e| e.t);
        let decode_failures = self
            .server
            .events()
            .iter()
            .filter(|e| matches!(e.kind, ServerEventKind::DecodeFailure { .. }))
            .count();
        Summary {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            duration_s: self.scenario.duration,
            polls: uc.polls,
            poll_faults: uc.poll_faults,
            frames_sent: uc.frames_sent,
            partial_frames: uc.partial_frames,
            frames_stored: self.server.store().readings().len() as u64,
            frames_rejected: dc.frames_rejected,
            decode_failure_events: decode_failures as u64,
            calls_answered_by_unit: uc.calls_answered,
            server_calls: ledger.calls as u64,
            alarm_calls: uc.alarm_calls,
            alarm_calls_failed: uc.alarm_calls_failed,
            first_alarm_call,
            billed_minutes_total: self.net.total_billed_minutes(),
            server_billed_minutes: ledger.total_billed_minutes,
            alarm_call_minutes,
            alarms_frame_flag: count(AlarmSource::FrameFlag) as u64,
            alarms_server_threshold: count(AlarmSource::ServerThreshold) as u64,
            alarms_missed_call: count(AlarmSource::MissedCall) as u64,
            final_soc: self.plant.soc,
            plant_energy_wh: self.plant.cumulative_energy,
        }
    }

    /// Writes every artifact into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
        let mut written = Vec::new();
        let mut put = |name: &str, body: &[u8]| -> Result<(), ScenarioError> {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| ScenarioError::Io {
                path: path.clone(),
                source,
            })?;
            written.push(path);
            Ok(())
        };
        let mut plant_csv = String::from(PlantState::CSV_HEADER);
        plant_csv.push('\n');
        for s in &self.plant_log {
            plant_csv.push_str(&s.csv_row());
            plant_csv.push('\n');
        }
        put(ARTIFACT_PLANT, plant_csv.as_bytes())?;
        put(ARTIFACT_READINGS, readings_csv(self.server.store().readings()).as_bytes())?;

        let mut unit_log = Vec::new();
        self.unit
            .write_event_log(&mut unit_log)
            .expect("writing to memory cannot fail");
        put(ARTIFACT_UNIT_LOG, &unit_log)?;

        let mut calls = String::from(CallRecord::CSV_HEADER);
        calls.push('\n');
        for c in self.call_records() {
            calls.push_str(&c.csv_row());
            calls.push('\n');
        }
        put(ARTIFACT_CALLS, calls.as_bytes())?;

        let mut alarms = String::new();
        for e in self.server.events() {
            if matches!(
                e.kind,
                ServerEventKind::AlarmRaised { .. }
                    | ServerEventKind::AlarmCoalesced { .. }
                    | ServerEventKind::AlarmAcked { .. }
                    | ServerEventKind::NotificationResult { .. }
            ) {
                alarms.push_str(&e.log_line());
                alarms.push('\n');
            }
        }
        put(ARTIFACT_ALARMS, alarms.as_bytes())?;

        let mut events = String::new();
        for e in self.server.events() {
            events.push_str(&e.log_line());
            events.push('\n');
        }
        put(ARTIFACT_SERVER_LOG, events.as_bytes())?;

        let mut summary = serde_json::to_vec_pretty(&self.summary()).expect("summary serializes");
        summary.push(b'\n');
        put(ARTIFACT_SUMMARY, &summary)?;
        Ok(written)
    }
}

pub const ARTIFACT_PLANT: &str = "plant.csv";
pub const ARTIFACT_READINGS: &str = "readings.csv";
pub const ARTIFACT_UNIT_LOG: &str = "unit_events.csv";
pub const ARTIFACT_CALLS: &str = "calls.csv";
pub const ARTIFACT_ALARMS: &str = "alarms.log";
pub const ARTIFACT_SERVER_LOG: &str = "server_events.log";
pub const ARTIFACT_SUMMARY: &str = "summary.json";
pub const ARTIFACT_STORE: &str = "store.ndjson";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub duration_s: f64,
    pub polls: u64,
    pub poll_faults: u64,
    pub frames_sent: u64,
    pub partial_frames: u64,
    pub frames_stored: u64,
    pub frames_rejected: u64,
    pub decode_failure_events: u64,
    pub calls_answered_by_unit: u64,
    pub server_calls: u64,
    pub alarm_calls: u64,
    pub alarm_calls_failed: u64,
    pub first_alarm_call: Option<SimTime>,
    pub billed_minutes_total: u64,
    pub server_billed_minutes: u64,
    pub alarm_call_minutes: u64,
    pub alarms_frame_flag: u64,
    pub alarms_server_threshold: u64,
    pub alarms_missed_call: u64,
    pub final_soc: f64,
    pub plant_energy_wh: f64,
}

/// Runs a scenario to completion, writing artifacts (and the server's
/// record log) into `out_dir`. Returns the finished simulation.
pub fn run(scenario: Scenario, out_dir: &Path) -> Result<Simulation, ScenarioError> {
    run_with_sink(scenario, out_dir, Box::new(MemorySink::default()))
}

pub fn run_with_sink(
    scenario: Scenario,
    out_dir: &Path,
    sink: Box<dyn NotificationSink>,
) -> Result<Simulation, ScenarioError> {
    scenario.validate()?;
    let io_err = |source| ScenarioError::Io {
        path: out_dir.to_path_buf(),
        source,
    };
    fs::create_dir_all(out_dir).map_err(io_err)?;
    let store_path = out_dir.join(ARTIFACT_STORE);
    if store_path.exists() {
        fs::remove_file(&store_path).map_err(io_err)?;
    }
    let store = Store::open(&store_path)?;
    let mut sim = Simulation::new(scenario, store, sink)?;
    sim.run_to_end()?;
    sim.write_artifacts(out_dir)?;
    Ok(sim)
}

/// Runs a scenario entirely in memory.
pub fn simulate(scenario: Scenario) -> Result<Simulation, ScenarioError> {
    let mut sim = Simulation::new(scenario, Store::in_memory(), Box::new(MemorySink::default()))?;
    sim.run_to_end()?;
    Ok(sim)
}

/// Human-readable summary, one fact per line.
pub fn render_summary<W: Write>(s: &Summary, mut w: W) -> io::Result<()> {
    let v = serde_json::to_value(s).expect("summary serializes");
    if let serde_json::Value::Object(map) = v {
        for (k, v) in map {
            writeln!(w, "{k:<24} {v}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_valid_and_listed() {
        assert_eq!(list().len(), 4);
        for name in BUILTIN_NAMES {
            builtin(name).unwrap().validate().unwrap();
        }
        assert!(matches!(describe("bogus"), Err(ScenarioError::Unknown(_))));
    }

    #[test]
    fn describe_round_trips_through_toml() {
        for name in BUILTIN_NAMES {
            let text = describe(name).unwrap();
            let parsed = Scenario::from_toml(&text, Path::new("x.toml")).unwrap();
            assert_eq!(parsed, builtin(name).unwrap());
        }
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let text = r#"
            name = "mini"
            duration = 120
            seed = 3
            [unit]
            own_number = "5550100"
            alarm_number = "5550199"
            [schedule]
            field_number = "5550100"
            server_number = "5550199"
        "#;
        let s = Scenario::from_toml(text, Path::new("mini.toml")).unwrap();
        assert_eq!(s.unit.poll_period, 30.0);
        assert_eq!(s.schedule.call_period, 3600.0);
    }

    #[test]
    fn rejects_bad_files() {
        let p = Path::new("bad.toml");
        assert!(matches!(Scenario::from_toml("name = 1", p), Err(ScenarioError::Parse { .. })));
        let mut s = builtin("nominal-day").unwrap();
        s.duration = 0.0;
        assert!(s.validate().is_err());
        let mut s = builtin("nominal-day").unwrap();
        s.schedule.call_period = 59.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn short_run_stores_first_reading() {
        let mut s = builtin("nominal-day").unwrap();
        s.duration = 120.0;
        let sim = simulate(s).unwrap();
        let sum = sim.summary();
        assert_eq!(sum.polls, 4);
        assert_eq!(sum.server_calls, 1);
        assert_eq!(sum.frames_stored, 1);
        assert_eq!(sum.frames_sent, 1);
        let r = &sim.server().store().readings()[0];
        assert_eq!(r.seq, 0);
        assert_eq!(r.timestamp, SimTime::from_millis(24_250));
    }
}
