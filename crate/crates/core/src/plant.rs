//! Physical model of the remote solar installation.
//!
//! A PV array driven by a sinusoidal daylight curve with seeded cloud
//! attenuation charges a lead-acid battery through a three-stage
//! (bulk / absorption / float) regulator while a scheduled load draws from
//! it. The battery is a linear open-circuit-voltage curve with a series
//! resistance plus a charge polarization term that grows as the battery
//! fills, which is what lets the terminal voltage reach the absorption
//! setpoint.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Cloud attenuation knots are this many seconds apart.
const CLOUD_KNOT_SPACING_S: f64 = 900.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("state of charge {0} outside [0, 1]")]
    SocOutOfRange(f64),
    #[error("invalid plant config: {0}")]
    InvalidConfig(String),
    #[error("time step {0} s outside (0, 60]")]
    InvalidStep(f64),
}

/// A constant-current load active between two times of day.
///
/// A window whose `start_s` is later than its `end_s` wraps past midnight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadWindow {
    pub start_s: f64,
    pub end_s: f64,
    pub amps: f64,
}

impl LoadWindow {
    fn active_at(&self, tod: f64) -> bool {
        if self.start_s <= self.end_s {
            tod >= self.start_s && tod < self.end_s
        } else {
            tod >= self.start_s || tod < self.end_s
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    /// W/m² at solar noon on a clear day.
    pub peak_irradiance: f64,
    pub sunrise_s: f64,
    pub sunset_s: f64,
    /// Array current at peak irradiance, A.
    pub array_rated_current: f64,
    /// Array open-circuit voltage at peak irradiance, V.
    pub array_open_circuit_voltage: f64,
    /// Ah.
    pub battery_capacity: f64,
    /// Ω.
    pub battery_internal_resistance: f64,
    /// Charge polarization coefficient, Ω. The effective polarization
    /// resistance is `charge_polarization / (1.01 - soc)`.
    pub charge_polarization: f64,
    pub ocv_empty: f64,
    pub ocv_full: f64,
    pub coulombic_efficiency: f64,
    pub absorption_voltage: f64,
    pub float_voltage: f64,
    /// Seconds spent in absorption before dropping to float.
    pub absorption_duration: f64,
    pub load_schedule: Vec<LoadWindow>,
    pub cloud_attenuation_seed: u64,
    /// Largest fractional irradiance loss caused by clouds.
    pub cloud_depth: f64,
    /// State of charge at scenario start.
    pub initial_soc: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            peak_irradiance: 1000.0,
            sunrise_s: 6.0 * 3600.0,
            sunset_s: 18.0 * 3600.0,
            array_rated_current: 20.0,
            array_open_circuit_voltage: 21.0,
            battery_capacity: 100.0,
            battery_internal_resistance: 0.01,
            charge_polarization: 0.0135,
            ocv_empty: 11.8,
            ocv_full: 12.7,
            coulombic_efficiency: 0.95,
            absorption_voltage: 14.4,
            float_voltage: 13.5,
            absorption_duration: 7200.0,
            load_schedule: vec![LoadWindow {
                start_s: 0.0,
                end_s: SECONDS_PER_DAY,
                amps: 1.0,
            }],
            cloud_attenuation_seed: 1,
            cloud_depth: 0.0,
            initial_soc: 0.6,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |msg: &str| Err(PlantError::InvalidConfig(msg.to_string()));
        if !(self.peak_irradiance > 0.0) {
            return bad("peak_irradiance must be > 0");
        }
        if !(0.0..=SECONDS_PER_DAY).contains(&self.sunrise_s)
            || !(0.0..=SECONDS_PER_DAY).contains(&self.sunset_s)
            || self.sunrise_s >= self.sunset_s
        {
            return bad("need 0 <= sunrise_s < sunset_s <= 86400");
        }
        if !(self.ocv_empty < self.ocv_full) {
            return bad("ocv_empty must be below ocv_full");
        }
        for (name, v) in [
            ("array_rated_current", self.array_rated_current),
            ("array_open_circuit_voltage", self.array_open_circuit_voltage),
            ("battery_capacity", self.battery_capacity),
            ("battery_internal_resistance", self.battery_internal_resistance),
            ("ocv_empty", self.ocv_empty),
            ("absorption_voltage", self.absorption_voltage),
            ("float_voltage", self.float_voltage),
        ] {
            if !(v > 0.0) {
                return Err(PlantError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if !(self.charge_polarization >= 0.0) || !(self.absorption_duration >= 0.0) {
            return bad("charge_polarization and absorption_duration must be >= 0");
        }
        if !(self.coulombic_efficiency > 0.0 && self.coulombic_efficiency <= 1.0) {
            return bad("coulombic_efficiency must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.cloud_depth) {
            return bad("cloud_depth must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.initial_soc) {
            return bad("initial_soc must be in [0, 1]");
        }
        if self.float_voltage > self.absorption_voltage {
            return bad("float_voltage must not exceed absorption_voltage");
        }
        for w in &self.load_schedule {
            if !(w.amps > 0.0) {
                return bad("load amps must be > 0");
            }
            if !(0.0..=SECONDS_PER_DAY).contains(&w.start_s)
                || !(0.0..=SECONDS_PER_DAY).contains(&w.end_s)
            {
                return bad("load window bounds must be seconds of day");
            }
        }
        Ok(())
    }

    /// Total scheduled load at simulated time `t`.
    pub fn load_at(&self, t: f64) -> f64 {
        let tod = t.rem_euclid(SECONDS_PER_DAY);
        self.load_schedule
            .iter()
            .filter(|w| w.active_at(tod))
            .map(|w| w.amps)
            .sum()
    }

    fn polarization(&self, soc: f64) -> f64 {
        self.charge_polarization / (1.01 - soc)
    }

    pub fn initial_state(&self) -> PlantState {
        let soc = self.initial_soc.clamp(0.0, 1.0);
        let load = self.load_at(0.0);
        PlantState {
            t: 0.0,
            soc,
            battery_voltage: self.ocv_unchecked(soc) - load * self.battery_internal_resistance,
            array_voltage: 0.0,
            charge_current: 0.0,
            load_current: load,
            cumulative_energy: 0.0,
            stage: ChargeStage::Bulk,
            absorption_elapsed: 0.0,
        }
    }

    fn ocv_unchecked(&self, soc: f64) -> f64 {
        self.ocv_empty + soc * (self.ocv_full - self.ocv_empty)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ChargeStage {
    Bulk,
    Absorption,
    Float,
}

impl fmt::Display for ChargeStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChargeStage::Bulk => "BULK",
            ChargeStage::Absorption => "ABSORPTION",
            ChargeStage::Float => "FLOAT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Simulated seconds since scenario start.
    pub t: f64,
    pub soc: f64,
    pub battery_voltage: f64,
    pub array_voltage: f64,
    pub charge_current: f64,
    pub load_current: f64,
    /// Wh delivered into the battery terminals.
    pub cumulative_energy: f64,
    pub stage: ChargeStage,
    /// Seconds spent in the current absorption phase.
    pub absorption_elapsed: f64,
}

impl PlantState {
    pub const CSV_HEADER: &'static str =
        "t,soc,battery_voltage,array_voltage,charge_current,load_current,cumulative_energy,stage";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.3},{:.6},{:.4},{:.4},{:.4},{:.4},{:.4},{}",
            self.t,
            self.soc,
            self.battery_voltage,
            self.array_voltage,
            self.charge_current,
            self.load_current,
            self.cumulative_energy,
            self.stage
        )
    }
}

/// 64-bit mix used to derive cloud knot values.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn knot_value(seed: u64, knot: u64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(knot));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in `[1 - cloud_depth, 1]`.
pub fn cloud_factor(cfg: &PlantConfig, t: f64) -> f64 {
    if cfg.cloud_depth == 0.0 {
        return 1.0;
    }
    let x = t.max(0.0) / CLOUD_KNOT_SPACING_S;
    let k = x.floor();
    let frac = x - k;
    let s = frac * frac * (3.0 - 2.0 * frac);
    let a = knot_value(cfg.cloud_attenuation_seed, k as u64);
    let b = knot_value(cfg.cloud_attenuation_seed, k as u64 + 1);
    1.0 - cfg.cloud_depth * (a + (b - a) * s)
}

/// Plane-of-array irradiance at simulated time `t`, W/m².
pub fn irradiance(cfg: &PlantConfig, t: f64) -> f64 {
    let tod = t.max(0.0).rem_euclid(SECONDS_PER_DAY);
    let phase = (tod - cfg.sunrise_s) / (cfg.sunset_s - cfg.sunrise_s);
    if !(0.0..=1.0).contains(&phase) {
        return 0.0;
    }
    let clear = cfg.peak_irradiance * (PI * phase).sin().max(0.0);
    clear * cloud_factor(cfg, t)
}

/// Open-circuit voltage for a state of charge.
pub fn ocv(cfg: &PlantConfig, soc: f64) -> Result<f64, PlantError> {
    if !(0.0..=1.0).contains(&soc) {
        return Err(PlantError::SocOutOfRange(soc));
    }
    Ok(cfg.ocv_unchecked(soc))
}

/// Advances the plant by `dt` seconds (explicit Euler).
pub fn step(cfg: &PlantConfig, state: &PlantState, dt: f64) -> Result<PlantState, PlantError> {
    if !(dt > 0.0 && dt <= 60.0) {
        return Err(PlantError::InvalidStep(dt));
    }
    let t = state.t + dt;
    let irr = irradiance(cfg, t);
    let available = irr / cfg.peak_irradiance * cfg.array_rated_current;
    let load = cfg.load_at(t);
    let r = cfg.battery_internal_resistance;

    let mut stage = state.stage;
    let mut absorption_elapsed = state.absorption_elapsed;
    if available <= 0.0 {
        // Regulator resets to bulk overnight.
        stage = ChargeStage::Bulk;
        absorption_elapsed = 0.0;
    }

    let soc = state.soc;
    let setpoint = match stage {
        ChargeStage::Bulk | ChargeStage::Absorption => cfg.absorption_voltage,
        ChargeStage::Float => cfg.float_voltage,
    };
    let after = |charge: f64| {
        let soc_next = (soc
            + (cfg.coulombic_efficiency * charge - load) * dt / (3600.0 * cfg.battery_capacity))
            .clamp(0.0, 1.0);
        let v = cfg.ocv_unchecked(soc_next) + (charge - load) * r + charge * cfg.polarization(soc_next);
        (soc_next, v)
    };
    // Terminal voltage rises with charge current, so the largest current
    // that keeps it at or below the setpoint can be bracketed.
    let limited = available > 0.0 && after(available).1 > setpoint;
    let charge = if !limited {
        available
    } else {
        let (mut lo, mut hi) = (0.0, available);
        for _ in 0..48 {
            let mid = 0.5 * (lo + hi);
            if after(mid).1 <= setpoint {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };

    if stage == ChargeStage::Bulk && limited {
        stage = ChargeStage::Absorption;
    }
    if stage == ChargeStage::Absorption {
        absorption_elapsed += dt;
        if absorption_elapsed >= cfg.absorption_duration {
            stage = ChargeStage::Float;
        }
    }

    let (soc_next, battery_voltage) = after(charge);

    let array_voltage = if irr > 0.0 {
        let open = cfg.array_open_circuit_voltage * (irr / cfg.peak_irradiance).powf(0.05);
        let duty = if available > 0.0 { charge / available } else { 0.0 };
        (open * (1.0 - duty) + (battery_voltage + 0.3) * duty).max(0.0)
    } else {
        0.0
    };

    Ok(PlantState {
        t,
        soc: soc_next,
        battery_voltage,
        array_voltage,
        charge_current: charge,
        load_current: load,
        cumulative_energy: state.cumulative_energy + battery_voltage * charge * dt / 3600.0,
        stage,
        absorption_elapsed,
    })
}
