//! Remote solar monitoring over a voice telephony link, fully simulated.
//!
//! The crate models both ends of the system. On site, a [`field_unit`]
//! polls a charge controller ([`controller`]) over Modbus RTU ([`modbus`],
//! [`protocol`]) and, when the monitoring server calls, keys its queued
//! readings into a cell phone as DTMF tones ([`dtmf`], [`telephony`]). The
//! [`server`] places those calls on a schedule, decodes the tones, stores
//! the readings and raises alarms. [`scenario`] wires everything onto one
//! simulated clock, driven by the physical model in [`plant`].

pub mod controller;
pub mod dtmf;
pub mod field_unit;
pub mod modbus;
pub mod plant;
pub mod protocol;
pub mod scenario;
pub mod server;
pub mod store;
pub mod telephony;
pub mod time;

pub use time::SimTime;
