use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A percentage held as an integer number of hundredths, so `23.83` is
/// stored as `2383`. All reported scores and deltas go through this type to
/// keep two-decimal arithmetic exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Percent(i64);

impl Percent {
    pub const ZERO: Percent = Percent(0);

    pub const fn from_hundredths(hundredths: i64) -> Self {
        Percent(hundredths)
    }

    pub const fn hundredths(self) -> i64 {
        self.0
    }

    /// `100 * num / den`, truncated toward zero to two decimals.
    /// Returns zero when `den` is zero.
    pub fn truncated_ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            return Percent::ZERO;
        }
        Percent((num as i128 * 10_000 / den as i128) as i64)
    }

    /// Scales a fraction in `[0, 1]` to a percentage, rounding half away
    /// from zero at the second decimal.
    pub fn from_fraction(fraction: f64) -> Self {
        Percent((fraction * 10_000.0).round() as i64)
    }

    /// Nearest two-decimal value to `value` (already in percent units).
    pub fn from_f64(value: f64) -> Self {
        Percent((value * 100.0).round() as i64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Arithmetic mean rounded half away from zero; `None` on an empty slice.
    pub fn mean(values: &[Percent]) -> Option<Percent> {
        if values.is_empty() {
            return None;
        }
        let sum: i128 = values.iter().map(|p| p.0 as i128).sum();
        let n = values.len() as i128;
        let q = sum / n;
        let r = sum % n;
        let rounded = if 2 * r.abs() >= n { q + sum.signum() } else { q };
        Some(Percent(rounded as i64))
    }
}

impl std::ops::Sub for Percent {
    type Output = Percent;
    fn sub(self, rhs: Percent) -> Percent {
        Percent(self.0 - rhs.0)
    }
}

impl std::ops::Neg for Percent {
    type Output = Percent;
    fn neg(self) -> Percent {
        Percent(-self.0)
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let s = format!("{sign}{}.{:02}", abs / 100, abs % 100);
        f.pad(&s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid percentage {0:?}")]
pub struct ParsePercentError(String);

impl FromStr for Percent {
    type Err = ParsePercentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if int_part.is_empty()
            || frac_part.len() > 2
            || !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(ParsePercentError(s.to_string()));
        }
        let int: i64 = int_part.parse().map_err(|_| ParsePercentError(s.to_string()))?;
        let mut frac: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().unwrap() };
        if frac_part.len() == 1 {
            frac *= 10;
        }
        let v = int * 100 + frac;
        Ok(Percent(if neg { -v } else { v }))
    }
}

impl Serialize for Percent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Percent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Ok(Percent::from_f64(v))
    }
}
