//! Simulated cellular network.
//!
//! The [`Network`] is the registry of handsets and calls. Handsets expose
//! the fourteen keypad lines a controller can actuate (twelve DTMF keys,
//! POWER and TALK) and a ring-interrupt line. Calls are billed per started
//! minute to the caller. Audio pressed into an active call is laid down at
//! its offset from the answer time, and the far end hears it, with channel
//! noise, truncated to the answered span of the call.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dtmf::{add_channel_noise, synthesize_symbol, AudioBuffer, DtmfSymbol, ToneTiming};
use crate::time::SimTime;

/// How long POWER must be held to start the handset.
pub const POWER_HOLD: Duration = Duration::from_secs(4);
/// Time from releasing POWER until the handset can take calls.
pub const BOOT_TIME: Duration = Duration::from_secs(20);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TelephonyError {
    #[error("{0} is not a valid phone number (3 to 15 digits)")]
    InvalidNumber(String),
    #[error("no handset registered as {0}")]
    CalleeUnknown(PhoneNumber),
    #[error("{0} is already on a call")]
    CalleeBusy(PhoneNumber),
    #[error("caller {0} cannot place a call now")]
    CallerUnavailable(PhoneNumber),
    #[error("{0} has no incoming call")]
    NoIncomingCall(PhoneNumber),
    #[error("no live call {0}")]
    UnknownCall(CallId),
    #[error("{0} is already registered")]
    DuplicateNumber(PhoneNumber),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PhoneNumber(String);

impl PhoneNumber {
    pub fn new(digits: impl Into<String>) -> Result<Self, TelephonyError> {
        let digits = digits.into();
        if (3..=15).contains(&digits.len()) && digits.bytes().all(|b| b.is_ascii_digit()) {
            Ok(PhoneNumber(digits))
        } else {
            Err(TelephonyError::InvalidNumber(digits))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for PhoneNumber {
    type Error = TelephonyError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        PhoneNumber::new(s)
    }
}

impl From<PhoneNumber> for String {
    fn from(n: PhoneNumber) -> String {
        n.0
    }
}

impl fmt::Display for PhoneNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub type CallId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PowerState {
    Off,
    Booting,
    Ready,
}

/// The fourteen keypad inputs wired to the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeypadLine {
    Key(DtmfSymbol),
    Power,
    Talk,
}

impl KeypadLine {
    pub fn all() -> impl Iterator<Item = KeypadLine> {
        DtmfSymbol::all()
            .map(KeypadLine::Key)
            .chain([KeypadLine::Power, KeypadLine::Talk])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Handset {
    number: PhoneNumber,
    power_state: PowerState,
    ready_at: Option<SimTime>,
    ring_interrupt: bool,
    ring_latched: bool,
    active_call: Option<CallId>,
    /// Noise level this handset adds to calls it takes part in.
    pub noise_snr_db: Option<f64>,
}

impl Handset {
    pub fn new(number: PhoneNumber) -> Self {
        Handset {
            number,
            power_state: PowerState::Off,
            ready_at: None,
            ring_interrupt: false,
            ring_latched: false,
            active_call: None,
            noise_snr_db: None,
        }
    }

    /// A line that is up from the start, like a server's modem.
    pub fn always_on(number: PhoneNumber) -> Self {
        Handset {
            power_state: PowerState::Ready,
            ..Handset::new(number)
        }
    }

    pub fn number(&self) -> &PhoneNumber {
        &self.number
    }

    pub fn power_state(&self) -> PowerState {
        self.power_state
    }

    pub fn ring_interrupt(&self) -> bool {
        self.ring_interrupt
    }

    pub fn active_call(&self) -> Option<CallId> {
        self.active_call
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandsetEvent {
    /// POWER held long enough; ready at the given time.
    Booting { ready_at: SimTime },
    /// Input had no effect.
    Ignored,
    /// A key press injected a tone into the live call.
    ToneSent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CallState {
    Ringing,
    Active,
    Ended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    HungUp,
    RingTimeout,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub id: CallId,
    pub from: PhoneNumber,
    pub to: PhoneNumber,
    pub placed_at: SimTime,
    pub answered_at: Option<SimTime>,
    pub ended_at: Option<SimTime>,
    pub billed_minutes: u32,
    pub billed_party: PhoneNumber,
    pub end_reason: Option<EndReason>,
}

impl CallRecord {
    pub const CSV_HEADER: &'static str = "id,from,to,placed_at,answered_at,ended_at,billed_minutes";

    pub fn csv_row(&self) -> String {
        let opt = |t: Option<SimTime>| t.map(|t| t.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.id,
            self.from,
            self.to,
            self.placed_at,
            opt(self.answered_at),
            opt(self.ended_at),
            self.billed_minutes
        )
    }

    pub fn was_answered(&self) -> bool {
        self.answered_at.is_some()
    }
}

/// Minutes charged for an answered call of the given length: every started
/// minute counts, and even a zero-length answered call costs one.
pub fn billed_minutes(answered_for: Duration) -> u32 {
    let ms = answered_for.as_millis() as u64;
    (ms.div_ceil(60_000) as u32).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub ring_timeout_s: u64,
    /// Probability that an answered call is cut by the network.
    pub call_drop_probability: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            ring_timeout_s: 30,
            call_drop_probability: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Call {
    record: CallRecord,
    state: CallState,
    /// Whether the callee's handset is actually ringing.
    alerting: bool,
    ring_deadline: SimTime,
    drop_at: Option<SimTime>,
    to_callee: AudioBuffer,
    to_caller: AudioBuffer,
    snr_db: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetworkConfig,
    seed: u64,
    handsets: BTreeMap<PhoneNumber, Handset>,
    calls: BTreeMap<CallId, Call>,
    next_id: CallId,
    rng: ChaCha8Rng,
    newly_ended: Vec<CallId>,
}

impl Network {
    pub fn new(cfg: NetworkConfig, seed: u64) -> Self {
        Network {
            cfg,
            seed,
            handsets: BTreeMap::new(),
            calls: BTreeMap::new(),
            next_id: 1,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x7E1E_FA11),
            newly_ended: Vec::new(),
        }
    }

    pub fn register(&mut self, handset: Handset) -> Result<(), TelephonyError> {
        if self.handsets.contains_key(&handset.number) {
            return Err(TelephonyError::DuplicateNumber(handset.number));
        }
        self.handsets.insert(handset.number.clone(), handset);
        Ok(())
    }

    pub fn handset(&self, number: &PhoneNumber) -> Option<&Handset> {
        self.handsets.get(number)
    }

    pub fn handset_mut(&mut self, number: &PhoneNumber) -> Option<&mut Handset> {
        self.handsets.get_mut(number)
    }

    fn known(&mut self, number: &PhoneNumber) -> Result<&mut Handset, TelephonyError> {
        self.handsets
            .get_mut(number)
            .ok_or_else(|| TelephonyError::CalleeUnknown(number.clone()))
    }

    /// Hold the POWER line for `hold`. Only a handset that is off reacts,
    /// and only to holds of at least [`POWER_HOLD`].
    pub fn hold_power_key(
        &mut self,
        number: &PhoneNumber,
        hold: Duration,
        now: SimTime,
    ) -> Result<HandsetEvent, TelephonyError> {
        let h = self.known(number)?;
        if h.power_state != PowerState::Off || hold < POWER_HOLD {
            return Ok(HandsetEvent::Ignored);
        }
        let ready_at = now + hold + BOOT_TIME;
        h.power_state = PowerState::Booting;
        h.ready_at = Some(ready_at);
        Ok(HandsetEvent::Booting { ready_at })
    }

    /// Moves network time forward: finishes boots, expires unanswered
    /// calls and applies scheduled drops.
    pub fn advance(&mut self, now: SimTime) {
        for h in self.handsets.values_mut() {
            if h.power_state == PowerState::Booting && h.ready_at.is_some_and(|t| t <= now) {
                h.power_state = PowerState::Ready;
                h.ready_at = None;
            }
        }
        let expired: Vec<(CallId, SimTime, EndReason)> = self
            .calls
            .iter()
            .filter_map(|(id, c)| match c.state {
                CallState::Ringing if c.ring_deadline <= now => {
                    Some((*id, c.ring_deadline, EndReason::RingTimeout))
                }
                CallState::Active => c
                    .drop_at
                    .filter(|t| *t <= now)
                    .map(|t| (*id, t, EndReason::Dropped)),
                _ => None,
            })
            .collect();
        for (id, at, reason) in expired {
            self.finish(id, at, reason);
        }
    }

    pub fn place_call(
        &mut self,
        from: &PhoneNumber,
        to: &PhoneNumber,
        now: SimTime,
    ) -> Result<CallId, TelephonyError> {
        let caller = self
            .handsets
            .get(from)
            .ok_or_else(|| TelephonyError::CallerUnavailable(from.clone()))?;
        if caller.power_state != PowerState::Ready || caller.active_call.is_some() {
            return Err(TelephonyError::CallerUnavailable(from.clone()));
        }
        let caller_snr = caller.noise_snr_db;
        let callee = self
            .handsets
            .get_mut(to)
            .ok_or_else(|| TelephonyError::CalleeUnknown(to.clone()))?;
        if callee.active_call.is_some() || from == to {
            return Err(TelephonyError::CalleeBusy(to.clone()));
        }
        let id = self.next_id;
        self.next_id += 1;
        let alerting = callee.power_state == PowerState::Ready;
        if alerting {
            callee.ring_interrupt = true;
            callee.ring_latched = true;
            callee.active_call = Some(id);
        }
        let snr_db = match (caller_snr, callee.noise_snr_db) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.handsets.get_mut(from).expect("caller checked").active_call = Some(id);
        self.calls.insert(
            id,
            Call {
                record: CallRecord {
                    id,
                    from: from.clone(),
                    to: to.clone(),
                    placed_at: now,
                    answered_at: None,
                    ended_at: None,
                    billed_minutes: 0,
                    billed_party: from.clone(),
                    end_reason: None,
                },
                state: CallState::Ringing,
                alerting,
                ring_deadline: now + Duration::from_secs(self.cfg.ring_timeout_s),
                drop_at: None,
                to_callee: AudioBuffer::default(),
                to_caller: AudioBuffer::default(),
                snr_db,
            },
        );
        Ok(id)
    }

    /// Consumes the latched ring edge, as a firmware interrupt flag would.
    pub fn take_ring_latch(&mut self, number: &PhoneNumber) -> bool {
        self.handsets
            .get_mut(number)
            .map(|h| std::mem::take(&mut h.ring_latched))
            .unwrap_or(false)
    }

    /// TALK: answers the call ringing on this handset.
    pub fn press_talk(&mut self, number: &PhoneNumber, now: SimTime) -> Result<CallId, TelephonyError> {
        let h = self.known(number)?;
        let id = match (h.ring_interrupt, h.active_call) {
            (true, Some(id)) => id,
            _ => return Err(TelephonyError::NoIncomingCall(number.clone())),
        };
        h.ring_interrupt = false;
        let drop = self.rng.random::<f64>() < self.cfg.call_drop_probability;
        let drop_after_ms = self.rng.random_range(1_000..20_000u64);
        let call = self.calls.get_mut(&id).expect("handset points at live call");
        call.state = CallState::Active;
        call.record.answered_at = Some(now);
        if drop {
            call.drop_at = Some(now + Duration::from_millis(drop_after_ms));
        }
        Ok(id)
    }

    /// Either party, or the network, ends the call.
    pub fn hang_up(&mut self, id: CallId, now: SimTime) -> Result<CallRecord, TelephonyError> {
        match self.calls.get(&id) {
            Some(c) if c.state != CallState::Ended => {}
            _ => return Err(TelephonyError::UnknownCall(id)),
        }
        Ok(self.finish(id, now, EndReason::HungUp))
    }

    fn finish(&mut self, id: CallId, at: SimTime, reason: EndReason) -> CallRecord {
        let call = self.calls.get_mut(&id).expect("caller checked the id");
        call.state = CallState::Ended;
        call.record.ended_at = Some(at);
        call.record.end_reason = Some(reason);
        call.record.billed_minutes = call
            .record
            .answered_at
            .map(|a| billed_minutes(at.saturating_sub(a)))
            .unwrap_or(0);
        let record = call.record.clone();
        for party in [&record.from, &record.to] {
            if let Some(h) = self.handsets.get_mut(party) {
                if h.active_call == Some(id) {
                    h.active_call = None;
                    h.ring_interrupt = false;
                    h.ring_latched = false;
                }
            }
        }
        self.newly_ended.push(id);
        record
    }

    /// Presses one DTMF key. The tone goes into the live call, if any; an
    /// idle handset makes no sound anywhere.
    pub fn press_dtmf_key(
        &mut self,
        number: &PhoneNumber,
        symbol: DtmfSymbol,
        timing: &ToneTiming,
        now: SimTime,
    ) -> Result<HandsetEvent, TelephonyError> {
        let h = self.known(number)?;
        if h.power_state != PowerState::Ready {
            return Ok(HandsetEvent::Ignored);
        }
        let Some(id) = h.active_call else {
            return Ok(HandsetEvent::Ignored);
        };
        let call = self.calls.get_mut(&id).expect("handset points at live call");
        if call.state != CallState::Active {
            return Ok(HandsetEvent::Ignored);
        }
        let answered = call.record.answered_at.expect("active calls are answered");
        let offset = ((now - answered).as_millis() as u64 * timing.sample_rate as u64 / 1000) as usize;
        let tone = synthesize_symbol(symbol, timing);
        let buf = if *number == call.record.from {
            &mut call.to_callee
        } else {
            &mut call.to_caller
        };
        buf.rate = timing.sample_rate;
        buf.mix_at(offset, &tone);
        Ok(HandsetEvent::ToneSent)
    }

    pub fn call_state(&self, id: CallId) -> Option<CallState> {
        self.calls.get(&id).map(|c| c.state)
    }

    pub fn record(&self, id: CallId) -> Option<&CallRecord> {
        self.calls.get(&id).map(|c| &c.record)
    }

    /// Whether the callee's handset was actually alerted for this call.
    pub fn is_alerting(&self, id: CallId) -> bool {
        self.calls.get(&id).is_some_and(|c| c.alerting)
    }

    /// Calls that ended since the last drain, in the order they ended.
    pub fn drain_ended(&mut self) -> Vec<CallRecord> {
        std::mem::take(&mut self.newly_ended)
            .into_iter()
            .map(|id| self.calls[&id].record.clone())
            .collect()
    }

    /// Every finished call, by id.
    pub fn records(&self) -> impl Iterator<Item = &CallRecord> {
        self.calls
            .values()
            .filter(|c| c.state == CallState::Ended)
            .map(|c| &c.record)
    }

    pub fn total_billed_minutes(&self) -> u64 {
        self.records().map(|r| r.billed_minutes as u64).sum()
    }

    /// What `party` heard on an ended call: the far end's keyed audio over
    /// exactly the answered span, with channel noise.
    pub fn received_audio(&self, id: CallId, party: &PhoneNumber, rate: u32) -> Option<AudioBuffer> {
        let call = self.calls.get(&id)?;
        let answered = call.record.answered_at?;
        let ended = call.record.ended_at?;
        let source = if *party == call.record.to {
            &call.to_callee
        } else if *party == call.record.from {
            &call.to_caller
        } else {
            return None;
        };
        let len = ((ended - answered).as_millis() as u64 * rate as u64 / 1000) as usize;
        let mut audio = AudioBuffer::silence(len, rate);
        let n = len.min(source.samples.len());
        audio.samples[..n].copy_from_slice(&source.samples[..n]);
        if let Some(snr) = call.snr_db {
            let direction = (*party == call.record.to) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(
                self.seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ direction,
            );
            add_channel_noise(&mut audio, snr, &mut rng);
        }
        Some(audio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtmf::{detect, parse_symbols};

    fn num(s: &str) -> PhoneNumber {
        PhoneNumber::new(s).unwrap()
    }

    fn t(s: u64) -> SimTime {
        SimTime::from_secs(s)
    }

    fn net() -> Network {
        let mut n = Network::new(NetworkConfig::default(), 1);
        n.register(Handset::always_on(num("5550100"))).unwrap();
        n.register(Handset::new(num("5550199"))).unwrap();
        n
    }

    fn server() -> PhoneNumber {
        num("5550100")
    }

    fn unit() -> PhoneNumber {
        num("5550199")
    }

    fn booted() -> Network {
        let mut n = net();
        n.hold_power_key(&unit(), POWER_HOLD, t(0)).unwrap();
        n.advance(t(24));
        n
    }

    #[test]
    fn phone_number_validation() {
        assert!(PhoneNumber::new("12").is_err());
        assert!(PhoneNumber::new("1234567890123456").is_err());
        assert!(PhoneNumber::new("555-0100").is_err());
        assert!(PhoneNumber::new("911").is_ok());
    }

    #[test]
    fn fourteen_keypad_lines() {
        assert_eq!(KeypadLine::all().count(), 14);
    }

    #[test]
    fn four_second_hold_boots_in_24s() {
        let mut n = net();
        let ev = n.hold_power_key(&unit(), Duration::from_secs(4), t(0)).unwrap();
        assert_eq!(ev, HandsetEvent::Booting { ready_at: t(24) });
        n.advance(SimTime::from_millis(23_750));
        assert_eq!(n.handset(&unit()).unwrap().power_state(), PowerState::Booting);
        n.advance(t(24));
        assert_eq!(n.handset(&unit()).unwrap().power_state(), PowerState::Ready);
    }

    #[test]
    fn short_hold_ignored() {
        let mut n = net();
        let ev = n.hold_power_key(&unit(), Duration::from_secs(2), t(0)).unwrap();
        assert_eq!(ev, HandsetEvent::Ignored);
        n.advance(t(100));
        assert_eq!(n.handset(&unit()).unwrap().power_state(), PowerState::Off);
    }

    #[test]
    fn booting_handset_does_not_ring() {
        let mut n = net();
        n.hold_power_key(&unit(), POWER_HOLD, t(0)).unwrap();
        let id = n.place_call(&server(), &unit(), t(10)).unwrap();
        assert!(!n.handset(&unit()).unwrap().ring_interrupt());
        assert!(!n.take_ring_latch(&unit()));
        n.advance(t(40));
        let r = n.record(id).unwrap();
        assert_eq!(r.end_reason, Some(EndReason::RingTimeout));
        assert_eq!(r.billed_minutes, 0);
    }

    #[test]
    fn off_handset_times_out_unbilled() {
        let mut n = net();
        let id = n.place_call(&server(), &unit(), t(0)).unwrap();
        n.advance(t(29));
        assert_eq!(n.call_state(id), Some(CallState::Ringing));
        n.advance(t(30));
        assert_eq!(n.call_state(id), Some(CallState::Ended));
        assert_eq!(n.record(id).unwrap().billed_minutes, 0);
        assert_eq!(n.drain_ended().len(), 1);
        assert!(n.drain_ended().is_empty());
    }

    #[test]
    fn ringing_and_busy() {
        let mut n = booted();
        n.register(Handset::always_on(num("5550111"))).unwrap();
        let id = n.place_call(&server(), &unit(), t(30)).unwrap();
        assert!(n.handset(&unit()).unwrap().ring_interrupt());
        assert_eq!(
            n.place_call(&num("5550111"), &unit(), t(30)),
            Err(TelephonyError::CalleeBusy(unit()))
        );
        assert_eq!(
            n.place_call(&num("5550111"), &num("999"), t(30)),
            Err(TelephonyError::CalleeUnknown(num("999")))
        );
        assert!(n.take_ring_latch(&unit()));
        assert_eq!(n.press_talk(&unit(), t(31)).unwrap(), id);
        assert!(!n.handset(&unit()).unwrap().ring_interrupt());
        assert_eq!(n.call_state(id), Some(CallState::Active));
    }

    #[test]
    fn talk_without_ring_fails() {
        let mut n = booted();
        assert_eq!(
            n.press_talk(&unit(), t(30)),
            Err(TelephonyError::NoIncomingCall(unit()))
        );
    }

    #[test]
    fn billing_examples() {
        for (secs, minutes) in [(10, 1), (61, 2), (60, 1), (0, 1), (120, 2), (121, 3)] {
            let mut n = booted();
            let id = n.place_call(&server(), &unit(), t(100)).unwrap();
            n.press_talk(&unit(), t(100)).unwrap();
            let rec = n.hang_up(id, t(100 + secs)).unwrap();
            assert_eq!(rec.billed_minutes, minutes, "{secs}s");
            assert_eq!(rec.billed_party, server());
        }
    }

    #[test]
    fn hang_up_unknown_call() {
        let mut n = booted();
        assert_eq!(n.hang_up(42, t(1)), Err(TelephonyError::UnknownCall(42)));
        let id = n.place_call(&server(), &unit(), t(30)).unwrap();
        n.hang_up(id, t(31)).unwrap();
        assert_eq!(n.hang_up(id, t(32)), Err(TelephonyError::UnknownCall(id)));
    }

    #[test]
    fn idle_key_press_is_silent() {
        let mut n = booted();
        let sym = DtmfSymbol::from_char('5').unwrap();
        let ev = n
            .press_dtmf_key(&unit(), sym, &ToneTiming::default(), t(30))
            .unwrap();
        assert_eq!(ev, HandsetEvent::Ignored);
    }

    #[test]
    fn keyed_audio_reaches_far_end() {
        let mut n = booted();
        let timing = ToneTiming::default();
        let id = n.place_call(&server(), &unit(), t(30)).unwrap();
        n.press_talk(&unit(), t(30)).unwrap();
        let symbols = parse_symbols("0#7#1264#1721#450#120#34#0*").unwrap();
        let mut at = t(31);
        for s in &symbols {
            assert_eq!(
                n.press_dtmf_key(&unit(), *s, &timing, at).unwrap(),
                HandsetEvent::ToneSent
            );
            at += timing.symbol_period();
        }
        n.hang_up(id, at).unwrap();
        let heard = n.received_audio(id, &server(), 8000).unwrap();
        assert_eq!(heard.samples.len(), (at - t(30)).as_millis() as usize * 8);
        assert_eq!(detect(&heard), symbols);
        // nothing travels the other way
        let back = n.received_audio(id, &unit(), 8000).unwrap();
        assert!(back.samples.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn audio_is_cut_at_hang_up() {
        let mut n = booted();
        let timing = ToneTiming::default();
        let id = n.place_call(&server(), &unit(), t(30)).unwrap();
        n.press_talk(&unit(), t(30)).unwrap();
        n.press_dtmf_key(&unit(), DtmfSymbol::HASH, &timing, t(30)).unwrap();
        n.hang_up(id, SimTime::from_millis(30_050)).unwrap();
        let heard = n.received_audio(id, &server(), 8000).unwrap();
        assert_eq!(heard.samples.len(), 400);
        assert!(n
            .press_dtmf_key(&unit(), DtmfSymbol::HASH, &timing, t(31))
            .is_ok_and(|e| e == HandsetEvent::Ignored));
    }

    #[test]
    fn dropped_calls_end_early() {
        let mut n = Network::new(
            NetworkConfig {
                call_drop_probability: 1.0,
                ..Default::default()
            },
            5,
        );
        n.register(Handset::always_on(server())).unwrap();
        n.register(Handset::always_on(unit())).unwrap();
        let id = n.place_call(&server(), &unit(), t(0)).unwrap();
        n.press_talk(&unit(), t(0)).unwrap();
        n.advance(t(25));
        let r = n.record(id).unwrap();
        assert_eq!(r.end_reason, Some(EndReason::Dropped));
        assert!(r.ended_at.unwrap() < t(20));
        assert!(n.handset(&unit()).unwrap().active_call().is_none());
    }

    #[test]
    fn csv_row_format() {
        let mut n = booted();
        let id = n.place_call(&server(), &unit(), t(30)).unwrap();
        n.press_talk(&unit(), SimTime::from_millis(30_250)).unwrap();
        let r = n.hang_up(id, t(40)).unwrap();
        assert_eq!(r.csv_row(), "1,5550100,5550199,30.000,30.250,40.000,1");
    }
}
