//! Telemetry over DTMF.
//!
//! A [`DataFrame`] is rendered as keypad symbols (decimal fields separated by
//! `#`, a check digit, and a `*` terminator), the symbols are synthesized as
//! dual tones, and the receiving side recovers symbols with a bank of
//! Goertzel filters before parsing the frame back.
//!
//! Frame layout:
//!
//! ```text
//! alarm # seq # battery_cv # source_cv # charge_ca # load_ca # energy_dkwh # chk *
//! ```
//!
//! `chk` is the sum of every preceding digit, mod 10.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Duration;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ROW_FREQS: [f64; 4] = [697.0, 770.0, 852.0, 941.0];
pub const COL_FREQS: [f64; 3] = [1209.0, 1336.0, 1477.0];

const KEYPAD: [[char; 3]; 4] = [
    ['1', '2', '3'],
    ['4', '5', '6'],
    ['7', '8', '9'],
    ['*', '0', '#'],
];

/// Peak amplitude of a synthesized dual tone.
pub const TONE_PEAK: f64 = 0.9;
/// Mean power of a synthesized dual tone: two sinusoids of amplitude
/// `TONE_PEAK / 2`.
pub const TONE_POWER: f64 = 2.0 * (TONE_PEAK / 2.0) * (TONE_PEAK / 2.0) / 2.0;

/// Samples per Goertzel block.
pub const BLOCK_LEN: usize = 205;
/// Samples between the starts of successive blocks. A quarter block keeps
/// at least two whole blocks inside any tone or gap of 40 ms or more.
pub const BLOCK_HOP: usize = BLOCK_LEN / 4;
/// The winning row and column must each carry at least this many times the
/// energy of every other DTMF frequency.
pub const DOMINANCE_RATIO: f64 = 4.0;
/// Consecutive blocks a symbol must persist before it can be emitted.
pub const MIN_TONE_BLOCKS: usize = 2;
/// Share of a block's energy the winning row and column must carry
/// together. A clean dual tone puts nearly all of it there; broadband
/// noise puts almost none.
pub const MIN_PAIR_ENERGY_FRACTION: f64 = 0.5;
/// Per-frequency amplitude below which a block counts as silence.
pub const MIN_TONE_AMPLITUDE: f64 = 0.05;

/// Longest decimal field a frame may carry.
pub const MAX_FIELD_DIGITS: usize = 6;
pub const MAX_SEQ: u16 = 999;
/// Fields between separators, including the check digit.
pub const FRAME_FIELDS: usize = 8;

/// One of the twelve keys on a phone keypad.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DtmfSymbol {
    row: u8,
    col: u8,
}

impl DtmfSymbol {
    pub const HASH: DtmfSymbol = DtmfSymbol { row: 3, col: 2 };
    pub const STAR: DtmfSymbol = DtmfSymbol { row: 3, col: 0 };

    pub fn all() -> impl Iterator<Item = DtmfSymbol> {
        (0..4u8).flat_map(|row| (0..3u8).map(move |col| DtmfSymbol { row, col }))
    }

    pub fn from_char(c: char) -> Option<DtmfSymbol> {
        DtmfSymbol::all().find(|s| s.as_char() == c)
    }

    pub fn from_digit(d: u8) -> Option<DtmfSymbol> {
        (d <= 9).then(|| DtmfSymbol::from_char((b'0' + d) as char).expect("digit on keypad"))
    }

    pub fn as_char(self) -> char {
        KEYPAD[self.row as usize][self.col as usize]
    }

    pub fn digit(self) -> Option<u8> {
        self.as_char().to_digit(10).map(|d| d as u8)
    }

    /// (row, column) frequencies in Hz.
    pub fn frequencies(self) -> (f64, f64) {
        (ROW_FREQS[self.row as usize], COL_FREQS[self.col as usize])
    }
}

impl fmt::Debug for DtmfSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "'{}'", self.as_char())
    }
}

impl fmt::Display for DtmfSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0:?} is not a keypad symbol")]
pub struct NotASymbol(pub char);

pub fn parse_symbols(s: &str) -> Result<Vec<DtmfSymbol>, NotASymbol> {
    s.chars()
        .map(|c| DtmfSymbol::from_char(c).ok_or(NotASymbol(c)))
        .collect()
}

pub fn symbols_to_string(symbols: &[DtmfSymbol]) -> String {
    symbols.iter().map(|s| s.as_char()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("field {field} does not fit in {MAX_FIELD_DIGITS} digits")]
    FieldOverflow { field: &'static str },
    #[error("field {field} value {value} outside its range")]
    FieldOutOfRange { field: &'static str, value: u64 },
    #[error("expected {FRAME_FIELDS} fields, found {0}")]
    BadFieldCount(usize),
    #[error("check digit {found} does not match computed {expected}")]
    BadCheckDigit { expected: u8, found: u8 },
    #[error("frame must end with exactly one '*'")]
    BadTerminator,
    #[error("field {0} is not a canonical decimal")]
    NonCanonicalDigits(usize),
}

/// One telemetry record as carried over the air.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct DataFrame {
    pub alarm: bool,
    pub seq: u16,
    pub battery_cv: u32,
    pub source_cv: u32,
    pub charge_ca: u32,
    pub load_ca: u32,
    pub energy_dkwh: u32,
}

const FIELD_NAMES: [&str; 7] = [
    "alarm",
    "seq",
    "battery_cv",
    "source_cv",
    "charge_ca",
    "load_ca",
    "energy_dkwh",
];

impl DataFrame {
    fn fields(&self) -> [u64; 7] {
        [
            self.alarm as u64,
            self.seq as u64,
            self.battery_cv as u64,
            self.source_cv as u64,
            self.charge_ca as u64,
            self.load_ca as u64,
            self.energy_dkwh as u64,
        ]
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        if self.seq > MAX_SEQ {
            return Err(FrameError::FieldOutOfRange {
                field: "seq",
                value: self.seq as u64,
            });
        }
        for (name, v) in FIELD_NAMES.iter().zip(self.fields()) {
            if v >= 1_000_000 {
                return Err(FrameError::FieldOverflow { field: name });
            }
        }
        Ok(())
    }

    pub fn battery_voltage(&self) -> f64 {
        self.battery_cv as f64 / 100.0
    }

    pub fn source_voltage(&self) -> f64 {
        self.source_cv as f64 / 100.0
    }

    pub fn charge_current(&self) -> f64 {
        self.charge_ca as f64 / 100.0
    }

    pub fn load_current(&self) -> f64 {
        self.load_ca as f64 / 100.0
    }

    pub fn total_kwh(&self) -> f64 {
        self.energy_dkwh as f64 / 10.0
    }
}

/// Renders a frame as keypad symbols.
pub fn encode_frame(frame: &DataFrame) -> Result<Vec<DtmfSymbol>, FrameError> {
    frame.validate()?;
    let mut text = String::with_capacity(48);
    for v in frame.fields() {
        text.push_str(&v.to_string());
        text.push('#');
    }
    let sum: u32 = text.chars().filter_map(|c| c.to_digit(10)).sum();
    text.push(char::from_digit(sum % 10, 10).expect("single digit"));
    text.push('*');
    Ok(parse_symbols(&text).expect("frame text uses keypad characters"))
}

/// Parses a symbol sequence produced by [`encode_frame`].
pub fn decode_frame(symbols: &[DtmfSymbol]) -> Result<DataFrame, FrameError> {
    let (last, body) = symbols.split_last().ok_or(FrameError::BadTerminator)?;
    if *last != DtmfSymbol::STAR || body.contains(&DtmfSymbol::STAR) {
        return Err(FrameError::BadTerminator);
    }
    let fields: Vec<&[DtmfSymbol]> = body.split(|s| *s == DtmfSymbol::HASH).collect();
    if fields.len() != FRAME_FIELDS {
        return Err(FrameError::BadFieldCount(fields.len()));
    }
    let mut values = [0u64; FRAME_FIELDS];
    for (i, field) in fields.iter().enumerate() {
        let canonical = !field.is_empty() && (field.len() == 1 || field[0].digit() != Some(0));
        if !canonical {
            return Err(FrameError::NonCanonicalDigits(i));
        }
        if field.len() > MAX_FIELD_DIGITS {
            return Err(FrameError::FieldOverflow {
                field: FIELD_NAMES.get(i).copied().unwrap_or("chk"),
            });
        }
        values[i] = field
            .iter()
            .fold(0, |acc, s| acc * 10 + s.digit().expect("separators removed") as u64);
    }
    if fields[FRAME_FIELDS - 1].len() != 1 {
        return Err(FrameError::NonCanonicalDigits(FRAME_FIELDS - 1));
    }
    let sum: u64 = fields[..FRAME_FIELDS - 1]
        .iter()
        .flat_map(|f| f.iter())
        .map(|s| s.digit().expect("digits only") as u64)
        .sum();
    let expected = (sum % 10) as u8;
    let found = values[FRAME_FIELDS - 1] as u8;
    if expected != found {
        return Err(FrameError::BadCheckDigit { expected, found });
    }
    if values[0] > 1 {
        return Err(FrameError::FieldOutOfRange {
            field: "alarm",
            value: values[0],
        });
    }
    if values[1] > MAX_SEQ as u64 {
        return Err(FrameError::FieldOutOfRange {
            field: "seq",
            value: values[1],
        });
    }
    Ok(DataFrame {
        alarm: values[0] == 1,
        seq: values[1] as u16,
        battery_cv: values[2] as u32,
        source_cv: values[3] as u32,
        charge_ca: values[4] as u32,
        load_ca: values[5] as u32,
        energy_dkwh: values[6] as u32,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToneTiming {
    pub tone_ms: u32,
    pub gap_ms: u32,
    pub sample_rate: u32,
}

impl Default for ToneTiming {
    fn default() -> Self {
        ToneTiming {
            tone_ms: 100,
            gap_ms: 100,
            sample_rate: 8000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("tone and gap must each last at least 40 ms (got {tone_ms}/{gap_ms})")]
pub struct TimingError {
    pub tone_ms: u32,
    pub gap_ms: u32,
}

impl ToneTiming {
    pub fn validate(&self) -> Result<(), TimingError> {
        if self.tone_ms < 40 || self.gap_ms < 40 || self.sample_rate == 0 {
            return Err(TimingError {
                tone_ms: self.tone_ms,
                gap_ms: self.gap_ms,
            });
        }
        Ok(())
    }

    /// Time one key press occupies on the line, tone plus gap.
    pub fn symbol_period(&self) -> Duration {
        Duration::from_millis((self.tone_ms + self.gap_ms) as u64)
    }

    fn samples(&self, ms: u32) -> usize {
        (ms as u64 * self.sample_rate as u64 / 1000) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub rate: u32,
}

impl AudioBuffer {
    pub fn silence(len: usize, rate: u32) -> Self {
        AudioBuffer {
            samples: vec![0.0; len],
            rate,
        }
    }

    pub fn duration(&self) -> Duration {
        if self.rate == 0 {
            return Duration::ZERO;
        }
        Duration::from_secs_f64(self.samples.len() as f64 / self.rate as f64)
    }

    /// Mixes `other` in starting at sample `offset`, growing as needed and
    /// clipping the sum to [-1, 1].
    pub fn mix_at(&mut self, offset: usize, other: &[f32]) {
        if self.samples.len() < offset + other.len() {
            self.samples.resize(offset + other.len(), 0.0);
        }
        for (dst, src) in self.samples[offset..].iter_mut().zip(other) {
            *dst = (*dst + *src).clamp(-1.0, 1.0);
        }
    }

    /// 16-bit mono PCM WAV.
    pub fn write_wav<W: Write>(&self, mut w: W) -> io::Result<()> {
        let data_len = (self.samples.len() * 2) as u32;
        w.write_all(b"RIFF")?;
        w.write_all(&(36 + data_len).to_le_bytes())?;
        w.write_all(b"WAVEfmt ")?;
        w.write_all(&16u32.to_le_bytes())?;
        w.write_all(&1u16.to_le_bytes())?; // PCM
        w.write_all(&1u16.to_le_bytes())?; // mono
        w.write_all(&self.rate.to_le_bytes())?;
        w.write_all(&(self.rate * 2).to_le_bytes())?;
        w.write_all(&2u16.to_le_bytes())?;
        w.write_all(&16u16.to_le_bytes())?;
        w.write_all(b"data")?;
        w.write_all(&data_len.to_le_bytes())?;
        for s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// One key press: the dual tone for `symbol` followed by the gap.
pub fn synthesize_symbol(symbol: DtmfSymbol, timing: &ToneTiming) -> Vec<f32> {
    let (fr, fc) = symbol.frequencies();
    let rate = timing.sample_rate as f64;
    let tone = timing.samples(timing.tone_ms);
    let mut out = Vec::with_capacity(tone + timing.samples(timing.gap_ms));
    out.extend((0..tone).map(|i| {
        let t = i as f64 / rate;
        (TONE_PEAK * 0.5 * ((2.0 * PI * fr * t).sin() + (2.0 * PI * fc * t).sin())) as f32
    }));
    out.resize(out.capacity(), 0.0);
    out
}

pub fn synthesize(symbols: &[DtmfSymbol], timing: &ToneTiming) -> AudioBuffer {
    AudioBuffer {
        samples: symbols
            .iter()
            .flat_map(|s| synthesize_symbol(*s, timing))
            .collect(),
        rate: timing.sample_rate,
    }
}

/// Adds white Gaussian noise at `snr_db` relative to the power of one
/// synthesized dual tone, then clips to [-1, 1].
pub fn add_channel_noise<R: Rng + ?Sized>(audio: &mut AudioBuffer, snr_db: f64, rng: &mut R) {
    let sigma = (TONE_POWER / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for s in &mut audio.samples {
        *s = (*s as f64 + normal.sample(rng)).clamp(-1.0, 1.0) as f32;
    }
}

/// Single-bin DFT power at `freq` over `block`, scaled to squared amplitude
/// so a sinusoid of amplitude `a` at `freq` yields about `a²`.
pub fn goertzel_power(block: &[f32], freq: f64, rate: f64) -> f64 {
    let coeff = 2.0 * (2.0 * PI * freq / rate).cos();
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for &x in block {
        let s0 = x as f64 + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
    }
    let power = s1 * s1 + s2 * s2 - coeff * s1 * s2;
    let n = block.len() as f64;
    power * 4.0 / (n * n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockClass {
    Silence,
    Tone(DtmfSymbol),
    Garbage,
}

fn classify(block: &[f32], rate: f64) -> BlockClass {
    let mut power = [0.0f64; 7];
    for (p, f) in power.iter_mut().zip(ROW_FREQS.iter().chain(COL_FREQS.iter())) {
        *p = goertzel_power(block, *f, rate);
    }
    let floor = MIN_TONE_AMPLITUDE * MIN_TONE_AMPLITUDE;
    if power.iter().all(|p| *p < floor) {
        return BlockClass::Silence;
    }
    let argmax = |range: std::ops::Range<usize>| {
        range
            .max_by(|a, b| power[*a].total_cmp(&power[*b]))
            .expect("non-empty range")
    };
    let row = argmax(0..4);
    let col = argmax(4..7);
    if power[row] < floor || power[col] < floor {
        return BlockClass::Garbage;
    }
    let dominant = (0..7)
        .filter(|i| *i != row && *i != col)
        .all(|i| power[row] >= DOMINANCE_RATIO * power[i] && power[col] >= DOMINANCE_RATIO * power[i]);
    if !dominant {
        return BlockClass::Garbage;
    }
    // A dual tone of amplitude a per component has mean square a² and
    // scaled bin power a² at each of its two frequencies.
    let mean_square = block.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>() / block.len() as f64;
    if power[row] + power[col] < MIN_PAIR_ENERGY_FRACTION * 2.0 * mean_square {
        return BlockClass::Garbage;
    }
    BlockClass::Tone(DtmfSymbol {
        row: row as u8,
        col: (col - 4) as u8,
    })
}

/// Recovers keypad symbols from 8 kHz audio.
///
/// A [`BLOCK_LEN`]-sample block slides over the audio in steps of
/// [`BLOCK_HOP`]. A symbol qualifies once it has held for
/// [`MIN_TONE_BLOCKS`] successive blocks and is emitted
/// at the next silent block. Blocks straddling a tone edge smear across the
/// filter bank and classify as garbage; they end a run but do not cancel a
/// symbol that already qualified. A tone with no gap after it is dropped.
pub fn detect(audio: &AudioBuffer) -> Vec<DtmfSymbol> {
    let rate = audio.rate as f64;
    let mut out = Vec::new();
    let mut candidate: Option<DtmfSymbol> = None;
    let mut run = 0usize;
    let mut qualified: Option<DtmfSymbol> = None;
    let starts = (0..).map(|i| i * BLOCK_HOP).take_while(|s| s + BLOCK_LEN <= audio.samples.len());
    for start in starts {
        let block = &audio.samples[start..start + BLOCK_LEN];
        match classify(block, rate) {
            BlockClass::Tone(s) => {
                if qualified.is_some_and(|q| q != s) {
                    // a different key with no gap in between
                    qualified = None;
                }
                if candidate == Some(s) {
                    run += 1;
                } else {
                    candidate = Some(s);
                    run = 1;
                }
                if run >= MIN_TONE_BLOCKS {
                    qualified = Some(s);
                }
            }
            BlockClass::Silence => {
                out.extend(qualified.take());
                candidate = None;
                run = 0;
            }
            BlockClass::Garbage => {
                candidate = None;
                run = 0;
            }
        }
    }
    out
}

/// Air time needed to key the whole frame.
pub fn frame_duration(frame: &DataFrame, timing: &ToneTiming) -> Result<Duration, FrameError> {
    Ok(timing.symbol_period() * encode_frame(frame)?.len() as u32)
}

/// The longest valid frame: every field at its widest.
pub fn widest_frame() -> DataFrame {
    DataFrame {
        alarm: true,
        seq: MAX_SEQ,
        battery_cv: 999_999,
        source_cv: 999_999,
        charge_ca: 999_999,
        load_ca: 999_999,
        energy_dkwh: 999_999,
    }
}

impl FromStr for DataFrame {
    type Err = FrameError;

    /// Parses the keypad text form, e.g. `0#7#1264#1721#450#120#34#0*`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let symbols = parse_symbols(s).map_err(|_| FrameError::BadTerminator)?;
        decode_frame(&symbols)
    }
}
