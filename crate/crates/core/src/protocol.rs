//! Generic controller interface.
//!
//! Firmware talks to a [`ControllerLink`] and gets physical quantities back;
//! how the quantities are fetched stays behind the trait. [`ModbusLink`]
//! reads the six-register map with one Read Holding Registers transaction
//! and retries on silence or bad replies; [`InMemoryLink`] skips the wire
//! entirely and stands in for "some other controller protocol".

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{full_map_request, RegisterMap, REGISTER_COUNT};
use crate::modbus::{decode_read_response, DeviceAddress, ExceptionCode, ModbusError, ReadOutcome, WireFrame};
use crate::time::SimTime;

/// The serial side of a Modbus link: sends one frame, maybe gets one back
/// after some latency.
pub trait RegisterTransport {
    fn exchange(&mut self, request: &WireFrame, now: SimTime) -> Option<(WireFrame, Duration)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerReading {
    /// V
    pub battery_voltage: f64,
    /// V
    pub source_voltage: f64,
    /// A
    pub charge_current: f64,
    /// A
    pub load_current: f64,
    /// kWh
    pub total_energy: f64,
    pub polled_at: SimTime,
}

impl ControllerReading {
    /// Inverse of the controller's fixed-point scaling.
    pub fn from_registers(regs: &RegisterMap, polled_at: SimTime) -> Self {
        let r = &regs.0;
        ControllerReading {
            battery_voltage: r[0] as f64 / 100.0,
            source_voltage: r[1] as f64 / 100.0,
            charge_current: r[2] as f64 / 100.0,
            load_current: r[3] as f64 / 100.0,
            total_energy: regs.energy_wh() as f64 / 1000.0,
            polled_at,
        }
    }

    pub fn get_battery_voltage(&self) -> f64 {
        self.battery_voltage
    }

    pub fn get_source_voltage(&self) -> f64 {
        self.source_voltage
    }

    pub fn get_charge_current(&self) -> f64 {
        self.charge_current
    }

    pub fn get_load_current(&self) -> f64 {
        self.load_current
    }

    pub fn get_total_kwh(&self) -> f64 {
        self.total_energy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub device: DeviceAddress,
    pub response_timeout_ms: u64,
    pub max_retries: u32,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            device: DeviceAddress::CONTROLLER,
            response_timeout_ms: 500,
            max_retries: 3,
        }
    }
}

impl LinkConfig {
    fn timeout(&self) -> Duration {
        Duration::from_millis(self.response_timeout_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PollErrorKind {
    #[error("no response")]
    Timeout,
    #[error("controller answered with exception {0:?}")]
    Exception(ExceptionCode),
    #[error("bad response: {0}")]
    Malformed(#[from] ModbusError),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("poll failed after {attempts} attempt(s): {kind}")]
pub struct PollError {
    pub kind: PollErrorKind,
    pub attempts: u32,
    pub elapsed: Duration,
}

impl PollError {
    pub fn is_timeout(&self) -> bool {
        self.kind == PollErrorKind::Timeout
    }
}

/// A successful poll and what it cost on the link.
#[derive(Debug, Clone, PartialEq)]
pub struct Polled {
    pub reading: ControllerReading,
    pub attempts: u32,
    pub elapsed: Duration,
}

pub trait ControllerLink {
    /// Fetches a fresh reading, stamped with `now`.
    fn poll(&mut self, cfg: &LinkConfig, now: SimTime) -> Result<Polled, PollError>;
}

/// Controller link over Modbus RTU.
#[derive(Debug, Clone)]
pub struct ModbusLink<T> {
    transport: T,
    requests_sent: usize,
}

impl<T: RegisterTransport> ModbusLink<T> {
    pub fn new(transport: T) -> Self {
        ModbusLink {
            transport,
            requests_sent: 0,
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }

    pub fn requests_sent(&self) -> usize {
        self.requests_sent
    }
}

impl<T: RegisterTransport> ControllerLink for ModbusLink<T> {
    fn poll(&mut self, cfg: &LinkConfig, now: SimTime) -> Result<Polled, PollError> {
        let request = if cfg.device == DeviceAddress::CONTROLLER {
            full_map_request()
        } else {
            crate::modbus::encode_read_request(
                &crate::modbus::ReadRequest::new(cfg.device, 0, REGISTER_COUNT as u16)
                    .expect("static span is valid"),
            )
        };
        let mut elapsed = Duration::ZERO;
        let mut last = PollErrorKind::Timeout;
        for attempt in 1..=cfg.max_retries + 1 {
            self.requests_sent += 1;
            let reply = self.transport.exchange(&request, now + elapsed);
            let (frame, latency) = match reply {
                Some((frame, latency)) if latency <= cfg.timeout() => (frame, latency),
                _ => {
                    elapsed += cfg.timeout();
                    last = PollErrorKind::Timeout;
                    continue;
                }
            };
            elapsed += latency;
            match decode_read_response(&frame, REGISTER_COUNT) {
                Ok(ReadOutcome::Registers(resp)) if resp.device == cfg.device => {
                    let mut regs = RegisterMap::default();
                    regs.0.copy_from_slice(&resp.values);
                    return Ok(Polled {
                        reading: ControllerReading::from_registers(&regs, now),
                        attempts: attempt,
                        elapsed,
                    });
                }
                Ok(ReadOutcome::Registers(_)) => {
                    last = PollErrorKind::Malformed(ModbusError::MalformedFrame(
                        "reply from unexpected device",
                    ))
                }
                Ok(ReadOutcome::Exception(e)) => last = PollErrorKind::Exception(e.code),
                Err(e) => last = PollErrorKind::Malformed(e),
            }
        }
        Err(PollError {
            kind: last,
            attempts: cfg.max_retries + 1,
            elapsed,
        })
    }
}

/// Link that hands back a register map directly, with no wire in between.
#[derive(Debug, Clone, Default)]
pub struct InMemoryLink {
    regs: RegisterMap,
    polls: usize,
}

impl InMemoryLink {
    pub fn new(regs: RegisterMap) -> Self {
        InMemoryLink { regs, polls: 0 }
    }

    pub fn set_registers(&mut self, regs: RegisterMap) {
        self.regs = regs;
    }

    pub fn polls(&self) -> usize {
        self.polls
    }
}

impl ControllerLink for InMemoryLink {
    fn poll(&mut self, _cfg: &LinkConfig, now: SimTime) -> Result<Polled, PollError> {
        self.polls += 1;
        Ok(Polled {
            reading: ControllerReading::from_registers(&self.regs, now),
            attempts: 1,
            elapsed: Duration::ZERO,
        })
    }
}
