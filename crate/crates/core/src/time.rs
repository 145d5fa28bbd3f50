//! Simulated clock time.
//!
//! All simulation components share one millisecond-resolution clock so that
//! scenario runs are exactly reproducible; nothing reads the wall clock.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// A point on the simulated clock, in milliseconds since scenario start.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1000)
    }

    /// Rounds to the nearest millisecond; negative inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * 1000.0).round().max(0.0) as u64)
    }

    pub const fn as_millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Whole seconds, truncated.
    pub const fn as_secs(self) -> u64 {
        self.0 / 1000
    }

    pub fn saturating_sub(self, other: SimTime) -> Duration {
        Duration::from_millis(self.0.saturating_sub(other.0))
    }

    pub fn checked_sub_duration(self, d: Duration) -> Option<SimTime> {
        self.0.checked_sub(d.as_millis() as u64).map(SimTime)
    }
}

impl Add<Duration> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: Duration) -> SimTime {
        SimTime(self.0 + rhs.as_millis() as u64)
    }
}

impl AddAssign<Duration> for SimTime {
    fn add_assign(&mut self, rhs: Duration) {
        self.0 += rhs.as_millis() as u64;
    }
}

impl Sub for SimTime {
    type Output = Duration;

    /// Panics if `rhs` is later than `self`.
    fn sub(self, rhs: SimTime) -> Duration {
        Duration::from_millis(
            self.0
                .checked_sub(rhs.0)
                .expect("subtracting a later SimTime"),
        )
    }
}

impl fmt::Display for SimTime {
    /// Seconds with millisecond precision, e.g. `24.250`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1000, self.0 % 1000)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_has_millisecond_precision() {
        assert_eq!(SimTime::from_millis(24_250).to_string(), "24.250");
        assert_eq!(SimTime::ZERO.to_string(), "0.000");
    }

    #[test]
    fn arithmetic() {
        let t = SimTime::from_secs(10) + Duration::from_millis(250);
        assert_eq!(t.as_millis(), 10_250);
        assert_eq!(t - SimTime::from_secs(10), Duration::from_millis(250));
        assert_eq!(SimTime::from_secs(1).saturating_sub(t), Duration::ZERO);
        assert_eq!(SimTime::from_secs_f64(1.2345).as_millis(), 1235);
    }
}
