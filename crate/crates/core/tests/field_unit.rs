use std::time::Duration;

use solarlink::controller::RegisterMap;
use solarlink::dtmf::{decode_frame, detect, frame_duration, widest_frame, ToneTiming};
use solarlink::field_unit::*;
use solarlink::protocol::{ControllerLink, ControllerReading, InMemoryLink, LinkConfig, PollError, Polled};
use solarlink::server::split_frames;
use solarlink::telephony::*;
use solarlink::SimTime;

const TICK: Duration = Duration::from_millis(250);

fn num(s: &str) -> PhoneNumber {
    PhoneNumber::new(s).unwrap()
}

fn unit_no() -> PhoneNumber {
    num("5550100")
}

fn server_no() -> PhoneNumber {
    num("5550199")
}

struct Rig<L> {
    net: Network,
    unit: FieldUnit,
    link: L,
    now: SimTime,
    /// Pick up alarm calls the way the monitoring server would.
    answer_alarms: bool,
}

impl<L: ControllerLink> Rig<L> {
    fn with_network(net_cfg: NetworkConfig, link: L) -> Self {
        let mut net = Network::new(net_cfg, 3);
        net.register(Handset::new(unit_no())).unwrap();
        net.register(Handset::always_on(server_no())).unwrap();
        let unit = FieldUnit::boot(FieldUnitConfig::new(unit_no(), server_no()), &mut net, SimTime::ZERO).unwrap();
        Rig {
            net,
            unit,
            link,
            now: SimTime::ZERO,
            answer_alarms: false,
        }
    }

    fn new(link: L) -> Self {
        Self::with_network(NetworkConfig::default(), link)
    }

    fn tick(&mut self) {
        self.net.advance(self.now);
        if self.answer_alarms && self.net.take_ring_latch(&server_no()) {
            self.net.press_talk(&server_no(), self.now).unwrap();
        }
        self.unit.tick(&mut self.net, &mut self.link, self.now);
        self.now += TICK;
    }

    fn run_until(&mut self, t: SimTime) {
        while self.now <= t {
            self.tick();
        }
    }

    fn poll_times(&self) -> Vec<SimTime> {
        self.unit
            .events()
            .iter()
            .filter(|e| matches!(e.kind, UnitEventKind::Poll | UnitEventKind::PollFailed))
            .map(|e| e.t)
            .collect()
    }

    /// Server side: ring the unit and return the call once it is over.
    fn collect(&mut self) -> CallRecord {
        let id = self.net.place_call(&server_no(), &unit_no(), self.now).unwrap();
        while self.net.call_state(id) != Some(CallState::Ended) {
            self.tick();
        }
        self.net.record(id).unwrap().clone()
    }
}

fn regs(battery_cv: u16) -> RegisterMap {
    RegisterMap([battery_cv, 1700, 300, 100, 0, 500])
}

fn heard_frames(rig: &Rig<impl ControllerLink>, rec: &CallRecord) -> Vec<solarlink::dtmf::DataFrame> {
    let audio = rig.net.received_audio(rec.id, &server_no(), 8000).unwrap();
    split_frames(&detect(&audio))
        .into_iter()
        .map(|s| decode_frame(s).unwrap())
        .collect()
}

#[test]
fn one_hour_is_exactly_120_polls_thirty_seconds_apart() {
    let mut rig = Rig::new(InMemoryLink::new(regs(1280)));
    rig.run_until(SimTime::from_millis(3_623_750));
    let polls = rig.poll_times();
    assert_eq!(polls.len(), 120);
    for w in polls.windows(2) {
        let gap = (w[1] - w[0]).as_secs_f64();
        assert!((gap - 30.0).abs() <= 0.25, "{gap}");
    }
}

#[test]
fn cadence_survives_hourly_collection_calls() {
    let mut rig = Rig::new(InMemoryLink::new(regs(1280)));
    for hour in 0..6u64 {
        rig.run_until(SimTime::from_millis(24_000 + hour * 3_600_000));
        let rec = rig.collect();
        assert!(rec.was_answered());
    }
    let polls = rig.poll_times();
    assert!(polls.len() > 150);
    for w in polls.windows(2) {
        let gap = (w[1] - w[0]).as_secs_f64();
        assert!((gap - 30.0).abs() <= 0.25, "{gap} at {}", w[0]);
    }
}

#[test]
fn unreachable_while_booting() {
    let mut rig = Rig::new(InMemoryLink::new(regs(1280)));
    let mut t = SimTime::ZERO;
    while t < SimTime::from_secs(24) {
        rig.run_until(t);
        let id = rig.net.place_call(&server_no(), &unit_no(), t).unwrap();
        assert!(!rig.net.is_alerting(id), "alerting at {t}");
        rig.net.hang_up(id, t).unwrap();
        t += Duration::from_millis(1_750);
    }
    rig.run_until(SimTime::from_secs(25));
    let first = rig.poll_times()[0];
    assert!(first >= SimTime::from_secs(24) && first <= SimTime::from_secs(24) + TICK, "{first}");
    assert!(rig.net.records().all(|r| !r.was_answered()));
}

#[test]
fn queue_holds_two_stored_and_the_current_reading() {
    for n in 4..12u64 {
        let mut rig = Rig::new(InMemoryLink::new(regs(1280)));
        rig.run_until(SimTime::from_secs(24 + 30 * (n - 1)));
        assert_eq!(rig.unit.counters().polls, n);
        let s = rig.unit.state();
        let last = (n - 1) as u16;
        assert_eq!(s.stored.iter().map(|f| f.seq).collect::<Vec<_>>(), vec![last - 2, last - 1]);
        assert_eq!(s.current.as_ref().unwrap().seq, last);
        assert_eq!(rig.unit.queue().len(), 3);
    }
}

#[test]
fn worst_case_call_fits_in_one_billed_minute() {
    // Largest register values the controller can report, and three-digit seqs.
    let mut rig = Rig::new(InMemoryLink::new(RegisterMap([u16::MAX; 6])));
    rig.run_until(SimTime::from_secs(24 + 30 * 110));
    let queued = rig.unit.queue();
    assert_eq!(queued.len(), 3);
    assert!(queued.iter().all(|f| f.seq >= 100));
    let rec = rig.collect();
    let talk = rec.ended_at.unwrap() - rec.answered_at.unwrap();
    assert!(talk <= Duration::from_secs(60), "{talk:?}");
    assert_eq!(rec.billed_minutes, 1);
    assert_eq!(heard_frames(&rig, &rec), queued);

    let widest = frame_duration(&widest_frame(), &ToneTiming::default()).unwrap();
    assert!(ANSWER_SETTLE + widest * 3 <= Duration::from_secs(60));
}

#[test]
fn no_call_carries_more_than_three_frames() {
    let mut rig = Rig::new(InMemoryLink::new(regs(1280)));
    for k in 1..8u64 {
        rig.run_until(SimTime::from_secs(24 + 30 * 5 * k) + Duration::from_secs(3));
        let rec = rig.collect();
        let frames = heard_frames(&rig, &rec);
        assert!(!frames.is_empty() && frames.len() <= 3, "{}", frames.len());
        let seqs: Vec<u16> = frames.iter().map(|f| f.seq).collect();
        assert!(seqs.windows(2).all(|w| w[0] < w[1]), "{seqs:?}");
    }
    assert!(rig.unit.events().iter().any(|e| e.kind == UnitEventKind::Evict));
}

/// Link whose polls take a fixed time on the wire.
struct SlowLink {
    regs: RegisterMap,
    takes: Duration,
}

impl ControllerLink for SlowLink {
    fn poll(&mut self, _cfg: &LinkConfig, now: SimTime) -> Result<Polled, PollError> {
        Ok(Polled {
            reading: ControllerReading::from_registers(&self.regs, now),
            attempts: 1,
            elapsed: self.takes,
        })
    }
}

#[test]
fn ring_during_a_poll_is_answered_after_it() {
    let mut rig = Rig::new(SlowLink {
        regs: regs(1280),
        takes: Duration::from_secs(2),
    });
    rig.run_until(SimTime::from_secs(24 + 60));
    let id = rig.net.place_call(&server_no(), &unit_no(), rig.now).unwrap();
    let placed = rig.now;
    assert_eq!(rig.unit.mode(), Mode::Polling);
    while rig.net.call_state(id) != Some(CallState::Ended) {
        rig.tick();
    }
    let rec = rig.net.record(id).unwrap().clone();
    let answered = rec.answered_at.unwrap();
    assert!(answered >= SimTime::from_secs(24 + 62), "{answered}");
    assert!(answered - placed < Duration::from_secs(3));
    let seqs: Vec<u16> = heard_frames(&rig, &rec).iter().map(|f| f.seq).collect();
    assert_eq!(seqs, vec![0, 1, 2]);
}

#[test]
fn dropped_call_keeps_undelivered_frames() {
    let mut rig = Rig::with_network(
        NetworkConfig {
            call_drop_probability: 1.0,
            ..NetworkConfig::default()
        },
        InMemoryLink::new(regs(1280)),
    );
    rig.run_until(SimTime::from_secs(24 + 60) + Duration::from_secs(1));
    let before = rig.unit.queue();
    let rec = rig.collect();
    let audio = rig.net.received_audio(rec.id, &server_no(), 8000).unwrap();
    let delivered: Vec<_> = split_frames(&detect(&audio))
        .into_iter()
        .filter_map(|s| decode_frame(s).ok())
        .collect();
    let after = rig.unit.queue();
    let c = rig.unit.counters();
    assert_eq!(c.frames_sent as usize + after.len(), before.len());
    assert_eq!(&before[before.len() - after.len()..], &after[..]);
    assert_eq!(delivered[..], before[..c.frames_sent as usize]);
    if after.is_empty() {
        assert_eq!(c.partial_frames, 0);
    } else {
        assert!(rig.unit.events().iter().any(|e| e.kind == UnitEventKind::TransmitPartial));
    }
}

#[test]
fn alarm_call_on_every_low_poll_and_none_after_recovery() {
    let mut rig = Rig::new(InMemoryLink::new(regs(1120)));
    rig.answer_alarms = true;
    rig.run_until(SimTime::from_millis(623_750));
    let c = rig.unit.counters();
    assert_eq!(c.polls, 20);
    assert_eq!(c.alarm_calls, 20);
    assert_eq!(c.alarm_calls_failed, 0);
    let alarm_calls: Vec<&CallRecord> = rig.net.records().filter(|r| r.from == unit_no()).collect();
    assert_eq!(alarm_calls.len(), 20);
    for r in &alarm_calls {
        assert_eq!(r.billed_party, unit_no());
        let frames = heard_frames(&rig, r);
        assert_eq!(frames.len(), 1);
        assert!(frames[0].alarm);
    }

    rig.link.set_registers(regs(1250));
    rig.run_until(SimTime::from_millis(1_223_750));
    let c = rig.unit.counters();
    assert_eq!(c.polls, 40);
    assert_eq!(c.alarm_calls, 20);
    assert!(!rig.unit.state().alarm_active);
}

#[test]
fn unanswered_alarm_call_is_logged_and_polling_resumes() {
    let mut rig = Rig::new(InMemoryLink::new(regs(1120)));
    rig.run_until(SimTime::from_secs(24 + 90));
    let c = rig.unit.counters();
    assert!(c.alarm_calls_failed >= 1);
    assert!(c.polls >= 3);
    assert!(rig
        .unit
        .events()
        .iter()
        .any(|e| e.kind == UnitEventKind::AlarmCallFailed));
}

#[test]
fn event_log_is_csv() {
    let mut rig = Rig::new(InMemoryLink::new(regs(1280)));
    rig.run_until(SimTime::from_secs(60));
    let mut out = Vec::new();
    rig.unit.write_event_log(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(UnitEvent::CSV_HEADER));
    assert!(lines.all(|l| l.split(',').count() >= 4));
}
