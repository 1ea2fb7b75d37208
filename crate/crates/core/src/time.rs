//! Simulation clock.
//!
//! All scheduling arithmetic runs on integer ticks of 0.1 minute so event
//! ordering never depends on floating-point rounding.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

pub const TICKS_PER_MINUTE: u64 = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ticks(pub u64);

impl Ticks {
    pub const ZERO: Ticks = Ticks(0);

    /// Rounds to the nearest tick. Negative and non-finite inputs clamp to zero.
    pub fn from_minutes(minutes: f64) -> Ticks {
        if !minutes.is_finite() || minutes <= 0.0 {
            return Ticks::ZERO;
        }
        Ticks((minutes * TICKS_PER_MINUTE as f64).round() as u64)
    }

    pub fn minutes(self) -> f64 {
        self.0 as f64 / TICKS_PER_MINUTE as f64
    }

    pub fn saturating_sub(self, rhs: Ticks) -> Ticks {
        Ticks(self.0.saturating_sub(rhs.0))
    }
}

impl Add for Ticks {
    type Output = Ticks;
    fn add(self, rhs: Ticks) -> Ticks {
        Ticks(self.0 + rhs.0)
    }
}

impl AddAssign for Ticks {
    fn add_assign(&mut self, rhs: Ticks) {
        self.0 += rhs.0;
    }
}

impl Sub for Ticks {
    type Output = Ticks;
    fn sub(self, rhs: Ticks) -> Ticks {
        Ticks(self.0 - rhs.0)
    }
}

impl fmt::Display for Ticks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0 / TICKS_PER_MINUTE, self.0 % TICKS_PER_MINUTE)
    }
}
