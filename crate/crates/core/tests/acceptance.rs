//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use solarlink::controller::{service, RegisterMap};
use solarlink::dtmf::*;
use solarlink::field_unit::{FieldUnit, FieldUnitConfig, UnitEventKind};
use solarlink::modbus::*;
use solarlink::plant::{ChargeStage, PlantState};
use solarlink::protocol::InMemoryLink;
use solarlink::scenario::{self, builtin, field_number, server_number, Simulation, BUILTIN_NAMES};
use solarlink::server::{split_frames, StoredReading};
use solarlink::telephony::*;
use solarlink::SimTime;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const TICK: Duration = Duration::from_millis(250);
const LV_THRESHOLD: f64 = 11.5;

struct Runs {
    nominal: Simulation,
    overload: Simulation,
}

fn main() {
    let t0 = Instant::now();
    let nominal = scenario::simulate(scenario::Scenario {
        plant_log_interval: 1.0,
        ..builtin("nominal-day").unwrap()
    })
    .expect("nominal-day runs");
    let overload = scenario::simulate(scenario::Scenario {
        plant_log_interval: 1.0,
        ..builtin("overload-day").unwrap()
    })
    .expect("overload-day runs");
    let runs = Runs { nominal, overload };
    println!("scenario runs: {:.1}s", t0.elapsed().as_secs_f64());

    let criteria: [(&str, fn(&Runs) -> Outcome); 10] = [
        ("crc-modbus", crc_modbus),
        ("poll-cadence", poll_cadence),
        ("boot-timing", boot_timing),
        ("queue-batching", queue_batching),
        ("billing", billing),
        ("continuous-alarm", continuous_alarm),
        ("dtmf-codec", dtmf_codec),
        ("end-to-end-integrity", end_to_end),
        ("determinism", determinism),
        ("day-curve-shape", day_curve_shape),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(|| check(&runs)))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
        let secs = start.elapsed().as_secs_f64();
        match out {
            Ok(detail) => println!("PASS {name:<22} {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name:<22} {detail} [{secs:.1}s]");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn crc_bitwise(data: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &byte in data {
        crc ^= byte as u16;
        for _ in 0..8 {
            let lsb = crc & 1;
            crc >>= 1;
            if lsb == 1 {
                crc ^= 0xA001;
            }
        }
    }
    crc
}

fn crc_modbus(_: &Runs) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let n = 10_000;
    for _ in 0..n {
        let len = rng.random_range(0..256);
        let data: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        ensure!(crc16(&data) == crc_bitwise(&data), "crc mismatch on {data:02x?}");
    }
    ensure!(crc16(b"123456789") == 0x4B37, "check string gave {:04x}", crc16(b"123456789"));

    let mut corruptions = 0;
    for _ in 0..2_000 {
        let dev = DeviceAddress::new(rng.random_range(1..=247)).unwrap();
        let req = ReadRequest::new(dev, rng.random_range(0..=1_000), rng.random_range(1..=MAX_READ_COUNT)).unwrap();
        let wire = encode_read_request(&req);
        ensure!(decode_read_request(&wire).ok() == Some(req), "request round trip");
        let values: Vec<u16> = (0..req.count()).map(|_| rng.random()).collect();
        let resp = encode_read_response(dev, &values).unwrap();
        match decode_read_response(&resp, values.len()) {
            Ok(ReadOutcome::Registers(r)) => ensure!(r.values == values && r.device == dev, "response round trip"),
            other => return Err(format!("response round trip gave {other:?}")),
        }
        for frame in [wire, resp] {
            let mut bytes = frame.into_bytes();
            let at = rng.random_range(0..bytes.len());
            bytes[at] ^= rng.random_range(1..=255u8);
            let bad = WireFrame::from_bytes(bytes);
            ensure!(bad.verify_crc().is_err(), "corrupted octet {at} passed the CRC");
            ensure!(decode_read_response(&bad, values.len()).is_err(), "corrupted response decoded");
            ensure!(decode_read_request(&bad).is_err(), "corrupted request decoded");
            corruptions += 1;
        }
    }
    // The simulated controller answers a full-map read with the same registers.
    let map = RegisterMap([1264, 1721, 450, 120, 0, 3400]);
    let reply = service(&solarlink::controller::full_map_request(), &map).unwrap();
    ensure!(
        decode_read_response(&reply, 6) == Ok(ReadOutcome::Registers(ReadResponse {
            device: DeviceAddress::CONTROLLER,
            values: map.0.to_vec()
        })),
        "controller full-map read"
    );
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2}s");
    Ok(format!("{n} random inputs match bitwise oracle; 0x4B37; {corruptions} corruptions rejected"))
}

fn poll_times(sim: &Simulation) -> Vec<SimTime> {
    sim.unit()
        .events()
        .iter()
        .filter(|e| matches!(e.kind, UnitEventKind::Poll | UnitEventKind::PollFailed))
        .map(|e| e.t)
        .collect()
}

fn poll_cadence(r: &Runs) -> Outcome {
    let polls = poll_times(&r.nominal);
    let first = polls[0];
    let hour_end = first + Duration::from_secs(3600);
    let in_hour = polls.iter().filter(|t| **t >= first && **t < hour_end).count();
    ensure!(in_hour == 120, "{in_hour} polls in the first hour");
    let mut worst: f64 = 0.0;
    for w in polls.windows(2) {
        let dev = ((w[1] - w[0]).as_secs_f64() - 30.0).abs();
        worst = worst.max(dev);
        ensure!(dev <= 0.25, "spacing {:.3}s at {}", (w[1] - w[0]).as_secs_f64(), w[0]);
    }
    Ok(format!(
        "120 polls in hour one; {} polls over the day, max spacing error {worst:.3}s",
        polls.len()
    ))
}

/// A field unit on its own network with a server line that never picks up.
struct Rig {
    net: Network,
    unit: FieldUnit,
    link: InMemoryLink,
    now: SimTime,
}

impl Rig {
    fn new(regs: RegisterMap) -> Rig {
        let mut net = Network::new(NetworkConfig::default(), 1);
        net.register(Handset::new(field_number())).unwrap();
        net.register(Handset::always_on(server_number())).unwrap();
        let unit = FieldUnit::boot(FieldUnitConfig::new(field_number(), server_number()), &mut net, SimTime::ZERO).unwrap();
        Rig {
            net,
            unit,
            link: InMemoryLink::new(regs),
            now: SimTime::ZERO,
        }
    }

    fn tick(&mut self) {
        self.net.advance(self.now);
        self.unit.tick(&mut self.net, &mut self.link, self.now);
        self.now += TICK;
    }

    fn run_until(&mut self, t: SimTime) {
        while self.now <= t {
            self.tick();
        }
    }

    fn collect(&mut self) -> CallRecord {
        let id = self.net.place_call(&server_number(), &field_number(), self.now).unwrap();
        while self.net.call_state(id) != Some(CallState::Ended) {
            self.tick();
        }
        self.net.record(id).unwrap().clone()
    }
}

fn boot_timing(r: &Runs) -> Outcome {
    let mut rig = Rig::new(RegisterMap([1280, 1700, 300, 100, 0, 500]));
    let mut probes = 0;
    while rig.now < SimTime::from_secs(24) {
        let t = rig.now;
        let id = rig.net.place_call(&server_number(), &field_number(), t).unwrap();
        ensure!(!rig.net.is_alerting(id), "unit reachable at {t}");
        rig.net.hang_up(id, t).unwrap();
        probes += 1;
        rig.tick();
    }
    rig.run_until(SimTime::from_secs(25));
    let id = rig.net.place_call(&server_number(), &field_number(), rig.now).unwrap();
    ensure!(rig.net.is_alerting(id), "unit unreachable after boot");

    let first = poll_times(&r.nominal)[0];
    let lo = SimTime::from_secs(24);
    ensure!(first >= lo && first <= lo + TICK, "first poll at {first}");
    Ok(format!("{probes} calls before 24 s all failed to ring; first poll at {first}"))
}

fn frames_per_call(sim: &Simulation) -> Vec<usize> {
    let mut out = Vec::new();
    let mut current: Option<usize> = None;
    for e in sim.unit().events() {
        match e.kind {
            UnitEventKind::Answer | UnitEventKind::AlarmCall => current = Some(0),
            UnitEventKind::TransmitFrame => *current.as_mut().expect("frames only inside calls") += 1,
            UnitEventKind::HangUp | UnitEventKind::AlarmCallFailed => out.extend(current.take()),
            _ => {}
        }
    }
    out
}

fn queue_batching(r: &Runs) -> Outcome {
    for n in 4..=8u64 {
        let mut rig = Rig::new(RegisterMap([1280, 1700, 300, 100, 0, 500]));
        rig.run_until(SimTime::from_secs(24 + 30 * (n - 1)));
        let s = rig.unit.state();
        let last = (n - 1) as u16;
        let stored: Vec<u16> = s.stored.iter().map(|f| f.seq).collect();
        ensure!(stored == vec![last - 2, last - 1], "after {n} polls stored {stored:?}");
        ensure!(s.current.map(|f| f.seq) == Some(last), "after {n} polls current is not seq {last}");
    }

    let mut max_frames = 0;
    for sim in [&r.nominal, &r.overload] {
        for k in frames_per_call(sim) {
            ensure!(k <= 3, "{} frames in one call in {}", k, sim.scenario().name);
            max_frames = max_frames.max(k);
        }
        for (call, k) in by_call(sim.server().store().readings()) {
            ensure!(k <= 3, "call {call} stored {k} frames");
        }
    }

    // Largest register values and three-digit sequence numbers.
    let mut rig = Rig::new(RegisterMap([u16::MAX; 6]));
    rig.run_until(SimTime::from_secs(24 + 30 * 110));
    let queued = rig.unit.queue();
    ensure!(queued.len() == 3, "queue of {}", queued.len());
    let rec = rig.collect();
    let talk = rec.ended_at.unwrap() - rec.answered_at.unwrap();
    ensure!(talk <= Duration::from_secs(60), "worst-case call {talk:?}");
    ensure!(rec.billed_minutes == 1, "worst-case call billed {}", rec.billed_minutes);
    let audio = rig.net.received_audio(rec.id, &server_number(), 8000).unwrap();
    let heard: Vec<DataFrame> = split_frames(&detect(&audio))
        .into_iter()
        .filter_map(|s| decode_frame(s).ok())
        .collect();
    ensure!(heard == queued, "worst-case call delivered {} of 3 frames", heard.len());
    Ok(format!(
        "queue = last 2 stored + current for N=4..8; max {max_frames} frames per call; worst-case call {:.1}s billed 1 min",
        talk.as_secs_f64()
    ))
}

fn by_call(readings: &[StoredReading]) -> BTreeMap<u64, usize> {
    let mut m = BTreeMap::new();
    for r in readings {
        *m.entry(r.call_id).or_insert(0) += 1;
    }
    m
}

fn billed_oracle(ms: u64) -> u32 {
    let whole = ms / 60_000;
    let part = !ms.is_multiple_of(60_000) as u64;
    (whole + part).max(1) as u32
}

fn billing(r: &Runs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for _ in 0..10_000 {
        let ms = rng.random_range(0..3 * 3_600_000u64);
        let got = billed_minutes(Duration::from_millis(ms));
        ensure!(got == billed_oracle(ms), "{ms} ms billed {got}");
    }
    for ms in [0, 1, 59_999, 60_000, 60_001] {
        ensure!(billed_minutes(Duration::from_millis(ms)) == billed_oracle(ms), "{ms} ms");
    }

    let mut detail = Vec::new();
    for sim in [&r.nominal, &r.overload] {
        let name = &sim.scenario().name;
        let calls = sim.call_records();
        let mut by_party: BTreeMap<String, u64> = BTreeMap::new();
        for c in &calls {
            let want = match (c.answered_at, c.ended_at) {
                (Some(a), Some(e)) => billed_oracle((e - a).as_millis() as u64),
                _ => 0,
            };
            ensure!(c.billed_minutes == want, "{name}: call {} billed {} want {want}", c.id, c.billed_minutes);
            *by_party.entry(c.billed_party.as_str().to_string()).or_default() += c.billed_minutes as u64;
        }
        let s = sim.summary();
        let ledger = sim.server().ledger();
        let server_side = by_party.get(server_number().as_str()).copied().unwrap_or(0);
        let unit_side = by_party.get(field_number().as_str()).copied().unwrap_or(0);
        ensure!(ledger.total_billed_minutes == server_side, "{name}: ledger {} vs network {server_side}", ledger.total_billed_minutes);
        ensure!(
            ledger.total_billed_minutes == ledger.entries.iter().map(|e| e.billed_minutes as u64).sum::<u64>(),
            "{name}: ledger total is not the sum of its entries"
        );
        ensure!(
            s.billed_minutes_total == ledger.total_billed_minutes + unit_side,
            "{name}: total {} != ledger {} + alarm calls {unit_side}",
            s.billed_minutes_total,
            ledger.total_billed_minutes
        );
        detail.push(format!("{name} {} = {} + {}", s.billed_minutes_total, ledger.total_billed_minutes, unit_side));
    }
    Ok(format!("10000 random durations exact; conservation: {}", detail.join(", ")))
}

fn poll_voltage(detail: &str) -> Option<f64> {
    detail.strip_suffix('V')?.parse().ok()
}

fn continuous_alarm(r: &Runs) -> Outcome {
    let sim = &r.overload;
    let events = sim.unit().events();
    let mut low_polls = 0;
    let mut last_low: Option<SimTime> = None;
    let mut recovered_polls = 0;
    for (i, e) in events.iter().enumerate() {
        if e.kind != UnitEventKind::Poll {
            continue;
        }
        let v = poll_voltage(&e.detail).ok_or_else(|| format!("poll detail {:?}", e.detail))?;
        let called = events[i..]
            .iter()
            .take_while(|x| x.t <= e.t + Duration::from_secs(1))
            .any(|x| x.kind == UnitEventKind::AlarmCall && x.seq == e.seq);
        if v < LV_THRESHOLD {
            ensure!(called, "poll at {} read {v} V with no alarm call", e.t);
            low_polls += 1;
            last_low = Some(e.t);
        } else {
            ensure!(!called, "alarm call after a {v} V poll at {}", e.t);
            if last_low.is_some() {
                recovered_polls += 1;
            }
        }
    }
    let alarm_calls: Vec<SimTime> = events
        .iter()
        .filter(|e| e.kind == UnitEventKind::AlarmCall)
        .map(|e| e.t)
        .collect();
    ensure!(low_polls > 0, "battery never went below {LV_THRESHOLD} V");
    ensure!(alarm_calls.len() == low_polls, "{} alarm calls for {low_polls} low polls", alarm_calls.len());
    let last_low = last_low.unwrap();
    ensure!(recovered_polls > 0, "no recovery before the end of the day");
    ensure!(
        alarm_calls.iter().all(|t| *t <= last_low + Duration::from_secs(1)),
        "alarm calls continued after recovery"
    );
    let failed = sim.unit().counters().alarm_calls_failed;
    ensure!(failed == 0, "{failed} alarm calls went unanswered");

    let onset = alarm_calls[0];
    let at = plant_at(sim.plant_log(), onset);
    ensure!(at.load_current > 0.0, "no load at first alarm ({})", onset);
    let flagged = sim.server().store().readings().iter().filter(|r| r.alarm).count();
    ensure!(flagged >= low_polls, "server stored {flagged} alarm readings for {low_polls} low polls");
    Ok(format!(
        "{low_polls} low polls -> {} alarm calls, 0 after recovery ({recovered_polls} polls); onset {onset} at {:.1} A load",
        alarm_calls.len(),
        at.load_current
    ))
}

/// Latest logged plant state at or before `t`.
fn plant_at(log: &[PlantState], t: SimTime) -> &PlantState {
    let secs = t.as_secs_f64();
    let i = log.partition_point(|s| s.t <= secs + 1e-9);
    &log[i.saturating_sub(1)]
}

fn random_frame(rng: &mut ChaCha8Rng) -> DataFrame {
    let mut field = |hi: u32| {
        if rng.random_bool(0.2) {
            rng.random_range(0..1_000_000)
        } else {
            rng.random_range(0..hi)
        }
    };
    let (b, s, c, l, e) = (field(1_600), field(2_200), field(2_000), field(1_500), field(10_000));
    DataFrame {
        alarm: rng.random_bool(0.5),
        seq: rng.random_range(0..=MAX_SEQ),
        battery_cv: b,
        source_cv: s,
        charge_ca: c,
        load_ca: l,
        energy_dkwh: e,
    }
}

fn dtmf_codec(_: &Runs) -> Outcome {
    let timing = ToneTiming::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let f = random_frame(&mut rng);
        let heard = detect(&synthesize(&encode_frame(&f).unwrap(), &timing));
        ensure!(decode_frame(&heard).as_ref() == Ok(&f), "clean trial {i}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (mut accepted, mut rejected, mut silent) = (0, 0, 0);
    for _ in 0..1000 {
        let f = random_frame(&mut rng);
        let mut audio = synthesize(&encode_frame(&f).unwrap(), &timing);
        add_channel_noise(&mut audio, 20.0, &mut rng);
        for part in split_frames(&detect(&audio)) {
            match decode_frame(part) {
                Ok(g) if g == f => accepted += 1,
                Ok(_) => silent += 1,
                Err(_) => rejected += 1,
            }
        }
    }
    ensure!(silent == 0, "{silent} corrupted frames accepted at 20 dB");

    let frame = DataFrame {
        alarm: false,
        seq: 7,
        battery_cv: 1264,
        source_cv: 1721,
        charge_ca: 450,
        load_ca: 120,
        energy_dkwh: 34,
    };
    let symbols = encode_frame(&frame).unwrap();
    let mut subs = 0;
    for (i, s) in symbols.iter().enumerate() {
        let Some(d) = s.digit() else { continue };
        for x in (0..10u8).filter(|x| *x != d) {
            let mut bad = symbols.clone();
            bad[i] = DtmfSymbol::from_digit(x).unwrap();
            ensure!(decode_frame(&bad).is_err(), "substitution {d}->{x} at {i} accepted");
            subs += 1;
        }
    }
    Ok(format!(
        "1000/1000 clean; 20 dB: {accepted} accepted, {rejected} rejected, 0 silent; {subs} substitutions all detected"
    ))
}

fn end_to_end(r: &Runs) -> Outcome {
    let sim = &r.nominal;
    let events = sim.unit().events();
    let sent: Vec<DataFrame> = events
        .iter()
        .filter(|e| e.kind == UnitEventKind::TransmitFrame)
        .map(|e| e.detail.parse::<DataFrame>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("unit log frame: {e}"))?;
    let stored = sim.server().store().readings();
    ensure!(sim.unit().counters().partial_frames == 0, "partial frames in a loss-free run");
    ensure!(sent.len() == stored.len(), "{} sent vs {} stored", sent.len(), stored.len());
    let cents = |x: f64| (x * 100.0).round() as u32;
    for (f, s) in sent.iter().zip(stored) {
        let same = f.seq == s.seq
            && f.alarm == s.alarm
            && f.battery_cv == cents(s.battery_voltage)
            && f.source_cv == cents(s.source_voltage)
            && f.charge_ca == cents(s.charge_current)
            && f.load_ca == cents(s.load_current)
            && f.energy_dkwh == (s.total_energy * 10.0).round() as u32;
        ensure!(same, "sent {f:?} stored {s:?}");
    }

    let polls: Vec<(u16, SimTime)> = events
        .iter()
        .filter(|e| e.kind == UnitEventKind::Poll)
        .map(|e| (e.seq.unwrap(), e.t))
        .collect();
    let mut worst: f64 = 0.0;
    for s in stored {
        let nearest = polls
            .iter()
            .filter(|(seq, _)| *seq == s.seq)
            .map(|(_, t)| (t.as_secs_f64() - s.timestamp.as_secs_f64()).abs())
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(nearest);
        ensure!(nearest <= 0.5, "seq {} stored at {} is {nearest:.3}s from its poll", s.seq, s.timestamp);
    }

    let agg = sim.server().daily_aggregates(0);
    let delta = agg.energy_delta.ok_or("no energy delta for day 0")?;
    let day: Vec<&StoredReading> = stored.iter().filter(|s| s.timestamp < SimTime::from_secs(86_400)).collect();
    let truth = |s: &StoredReading| -> f64 {
        let poll = polls
            .iter()
            .filter(|(seq, _)| *seq == s.seq)
            .min_by_key(|(_, t)| t.as_millis().abs_diff(s.timestamp.as_millis()))
            .unwrap()
            .1;
        plant_at(sim.plant_log(), poll).cumulative_energy / 1000.0
    };
    let true_delta = truth(day[day.len() - 1]) - truth(day[0]);
    let err = (delta - true_delta).abs();
    // Each end is rounded to 0.1 kWh on the wire.
    ensure!(err <= 0.1 + 1e-9, "energy delta {delta} vs plant {true_delta:.4}");
    Ok(format!(
        "{} frames identical; max timestamp error {worst:.3}s; energy delta {delta:.1} vs plant {true_delta:.4} kWh",
        sent.len()
    ))
}

fn digest_dir(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let bytes = std::fs::read(&path).unwrap();
        let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), hex);
    }
    out
}

fn determinism(_: &Runs) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut files = 0;
    for name in BUILTIN_NAMES {
        let a = tmp.path().join(format!("{name}-a"));
        let b = tmp.path().join(format!("{name}-b"));
        scenario::run(builtin(name).unwrap(), &a).map_err(|e| e.to_string())?;
        scenario::run(builtin(name).unwrap(), &b).map_err(|e| e.to_string())?;
        let (da, db) = (digest_dir(&a), digest_dir(&b));
        ensure!(da.len() >= 8, "{name}: only {} artifacts", da.len());
        for (file, h) in &da {
            ensure!(db.get(file) == Some(h), "{name}: {file} differs between runs");
        }
        files += da.len();
    }
    Ok(format!("{} scenarios x 2 runs, {files} artifact files byte-identical", BUILTIN_NAMES.len()))
}

fn non_decreasing(xs: &[(f64, f64)]) -> Option<f64> {
    xs.windows(2).find(|w| w[1].1 < w[0].1 - 1e-9).map(|w| w[1].0)
}

fn non_increasing(xs: &[(f64, f64)]) -> Option<f64> {
    xs.windows(2).find(|w| w[1].1 > w[0].1 + 1e-9).map(|w| w[1].0)
}

fn day_curve_shape(r: &Runs) -> Outcome {
    let sim = &r.nominal;
    let plant = &sim.scenario().plant;
    let log = sim.plant_log();

    let mut order = vec![log[0].stage];
    for s in log {
        if *order.last().unwrap() != s.stage {
            order.push(s.stage);
        }
    }
    let day_stages: Vec<ChargeStage> = order.iter().copied().take(3).collect();
    ensure!(
        day_stages == [ChargeStage::Bulk, ChargeStage::Absorption, ChargeStage::Float],
        "stage order {order:?}"
    );
    let first = |stage| log.iter().find(|s| s.stage == stage).map(|s| s.t).unwrap();
    let absorption_at = first(ChargeStage::Absorption);
    let float_at = first(ChargeStage::Float);
    ensure!(
        absorption_at > plant.sunrise_s && float_at < plant.sunset_s,
        "stage transitions outside daylight"
    );

    // Load steps split the evening into constant-load stretches.
    let mut breaks: Vec<f64> = plant
        .load_schedule
        .iter()
        .flat_map(|w| [w.start_s, w.end_s])
        .filter(|t| *t > plant.sunset_s && *t < 86_400.0)
        .collect();
    breaks.push(86_400.0);
    breaks.sort_by(f64::total_cmp);

    let check = |series: &[(f64, f64)], label: &str| -> Result<(), String> {
        let span = |a: f64, b: f64| -> Vec<(f64, f64)> {
            series.iter().copied().filter(|(t, _)| *t > a && *t < b).collect()
        };
        let morning = span(plant.sunrise_s, absorption_at);
        ensure!(morning.len() > 10, "{label}: too few morning points");
        if let Some(t) = non_decreasing(&morning) {
            return Err(format!("{label}: voltage falls at {t} during the morning rise"));
        }
        ensure!(
            morning.last().unwrap().1 > morning[0].1 + 0.5,
            "{label}: no rise after sunrise"
        );
        let mut from = plant.sunset_s;
        for b in &breaks {
            if let Some(t) = non_increasing(&span(from, *b)) {
                return Err(format!("{label}: voltage rises at {t} after sunset"));
            }
            from = *b;
        }
        let peak = series.iter().map(|p| p.1).fold(f64::MIN, f64::max);
        let peak_t = series.iter().find(|p| p.1 == peak).unwrap().0;
        ensure!(
            peak_t > plant.sunrise_s && peak_t < plant.sunset_s,
            "{label}: peak at {peak_t} is not in daylight"
        );
        let at_sunset = span(plant.sunset_s - 60.0, plant.sunset_s + 1.0);
        let end = series.last().unwrap().1;
        ensure!(end < at_sunset.last().unwrap().1, "{label}: no decline after sunset");
        Ok(())
    };

    let truth: Vec<(f64, f64)> = log.iter().map(|s| (s.t, s.battery_voltage)).collect();
    check(&truth, "plant")?;
    let stored: Vec<(f64, f64)> = sim
        .server()
        .store()
        .readings()
        .iter()
        .map(|r| (r.timestamp.as_secs_f64(), r.battery_voltage))
        .collect();
    check(&stored, "stored")?;
    Ok(format!(
        "BULK->ABSORPTION at {:.0}s ->FLOAT at {:.0}s; rises after sunrise, declines after sunset (plant and stored series)",
        absorption_at, float_at
    ))
}
