//! The simulated charge controller: a Modbus slave over a six-register map.
//!
//! | register | quantity                 | unit          |
//! |----------|--------------------------|---------------|
//! | 0        | battery voltage          | centivolts    |
//! | 1        | array (source) voltage   | centivolts    |
//! | 2        | charge current           | centiamps     |
//! | 3        | load current             | centiamps     |
//! | 4, 5     | total energy, high word first | Wh (u32) |

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::modbus::{
    self, decode_read_request, encode_exception, encode_read_response, DeviceAddress,
    ExceptionCode, ModbusError, WireFrame, READ_HOLDING_REGISTERS,
};
use crate::plant::PlantState;
use crate::protocol::RegisterTransport;
use crate::time::SimTime;

pub const REGISTER_COUNT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegisterMap(pub [u16; REGISTER_COUNT]);

fn centi(x: f64) -> u16 {
    (x * 100.0).round().clamp(0.0, u16::MAX as f64) as u16
}

impl RegisterMap {
    pub fn energy_wh(&self) -> u32 {
        (self.0[4] as u32) << 16 | self.0[5] as u32
    }

    /// Registers `start..start + count`, or `None` if the span leaves the map.
    pub fn span(&self, start: u16, count: u16) -> Option<&[u16]> {
        let (start, count) = (start as usize, count as usize);
        (start + count <= REGISTER_COUNT).then(|| &self.0[start..start + count])
    }
}

/// Captures the plant quantities into fixed-point registers, saturating at
/// the register bounds.
pub fn snapshot(state: &PlantState) -> RegisterMap {
    let wh = state.cumulative_energy.round().clamp(0.0, u32::MAX as f64) as u32;
    RegisterMap([
        centi(state.battery_voltage),
        centi(state.array_voltage),
        centi(state.charge_current),
        centi(state.load_current),
        (wh >> 16) as u16,
        (wh & 0xFFFF) as u16,
    ])
}

/// Slave behaviour for one request frame. `None` means the slave stays
/// silent: bad CRC, truncated frame, or a different address.
pub fn service(frame: &WireFrame, regs: &RegisterMap) -> Option<WireFrame> {
    service_as(DeviceAddress::CONTROLLER, frame, regs)
}

fn service_as(me: DeviceAddress, frame: &WireFrame, regs: &RegisterMap) -> Option<WireFrame> {
    let (address, function) = frame.header().ok()?;
    if address != me.get() {
        return None;
    }
    if function != READ_HOLDING_REGISTERS {
        return Some(encode_exception(me, ExceptionCode::IllegalFunction));
    }
    let req = match decode_read_request(frame) {
        Ok(req) => req,
        Err(ModbusError::InvalidRange { .. }) => {
            return Some(encode_exception(me, ExceptionCode::IllegalDataAddress))
        }
        Err(_) => return Some(encode_exception(me, ExceptionCode::IllegalDataValue)),
    };
    match regs.span(req.start(), req.count()) {
        Some(values) => Some(
            encode_read_response(me, values).expect("span length checked by ReadRequest"),
        ),
        None => Some(encode_exception(me, ExceptionCode::IllegalDataAddress)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Simulated time between request and response.
    pub response_latency_ms: u64,
    /// Fraction of responses silently dropped.
    pub drop_rate: f64,
    /// Fraction of responses with one bit flipped on the wire.
    pub corrupt_rate: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            response_latency_ms: 50,
            drop_rate: 0.0,
            corrupt_rate: 0.0,
        }
    }
}

/// The controller as seen from the serial port, with optional line faults.
#[derive(Debug, Clone)]
pub struct SimulatedController {
    regs: RegisterMap,
    cfg: ControllerConfig,
    rng: ChaCha8Rng,
    requests: usize,
}

impl SimulatedController {
    pub fn new(cfg: ControllerConfig, seed: u64) -> Self {
        SimulatedController {
            regs: RegisterMap::default(),
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            requests: 0,
        }
    }

    pub fn set_registers(&mut self, regs: RegisterMap) {
        self.regs = regs;
    }

    pub fn registers(&self) -> &RegisterMap {
        &self.regs
    }

    /// Request frames received so far.
    pub fn requests(&self) -> usize {
        self.requests
    }
}

impl RegisterTransport for SimulatedController {
    fn exchange(&mut self, request: &WireFrame, _now: SimTime) -> Option<(WireFrame, Duration)> {
        self.requests += 1;
        let reply = service(request, &self.regs)?;
        // Draw both faults every time so the random stream does not depend
        // on which branch was taken.
        let drop = self.rng.random::<f64>() < self.cfg.drop_rate;
        let corrupt = self.rng.random::<f64>() < self.cfg.corrupt_rate;
        let bit: usize = self.rng.random_range(0..reply.len() * 8);
        if drop {
            return None;
        }
        let reply = if corrupt {
            let mut bytes = reply.into_bytes();
            bytes[bit / 8] ^= 1 << (bit % 8);
            WireFrame::from_bytes(bytes)
        } else {
            reply
        };
        Some((reply, Duration::from_millis(self.cfg.response_latency_ms)))
    }
}

/// Convenience for building the canonical poll request.
pub fn full_map_request() -> WireFrame {
    modbus::encode_read_request(
        &modbus::ReadRequest::new(DeviceAddress::CONTROLLER, 0, REGISTER_COUNT as u16)
            .expect("static request is valid"),
    )
}
