//! Exact fixed-point quantities at 10⁻⁶ resolution.
//!
//! Impact factors, fault margins and trust levels are all [`ImpactValue`]s.
//! Arithmetic is integer arithmetic on micro-units, so sums are exact and
//! comparisons at the trust-limit boundary never suffer from rounding.

use std::fmt;
use std::iter::Sum;
use std::ops::Add;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of fractional decimal digits an [`ImpactValue`] can carry.
pub const FRACTION_DIGITS: usize = 6;

/// Micro-units per whole unit.
pub const SCALE: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad decimal {input:?}: {reason}")]
pub struct ParseDecimalError {
    pub input: String,
    pub reason: &'static str,
}

/// A nonnegative decimal with exactly six fractional digits of precision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ImpactValue(u64);

impl ImpactValue {
    pub const ZERO: ImpactValue = ImpactValue(0);

    pub const fn from_micro(micro: u64) -> Self {
        ImpactValue(micro)
    }

    pub const fn micro(self) -> u64 {
        self.0
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, other: Self) -> Option<Self> {
        self.0.checked_add(other.0).map(ImpactValue)
    }

    pub fn checked_sub(self, other: Self) -> Option<Self> {
        self.0.checked_sub(other.0).map(ImpactValue)
    }

    /// Parses a plain decimal string: digits, an optional `.`, at most six
    /// fractional digits. Signs, exponents and whitespace are rejected, and
    /// extra precision is an error rather than being rounded away.
    pub fn parse(s: &str) -> Result<Self, ParseDecimalError> {
        let err = |reason| ParseDecimalError {
            input: s.to_owned(),
            reason,
        };
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err("no digits"));
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(err("only digits and a single '.' are allowed"));
        }
        if frac_part.len() > FRACTION_DIGITS {
            return Err(err("more than 6 fractional digits"));
        }

        let mut whole: u64 = 0;
        for b in int_part.bytes() {
            whole = whole
                .checked_mul(10)
                .and_then(|w| w.checked_add(u64::from(b - b'0')))
                .ok_or_else(|| err("value out of range"))?;
        }
        let mut frac: u64 = 0;
        for b in frac_part.bytes() {
            frac = frac * 10 + u64::from(b - b'0');
        }
        for _ in frac_part.len()..FRACTION_DIGITS {
            frac *= 10;
        }
        whole
            .checked_mul(SCALE)
            .and_then(|w| w.checked_add(frac))
            .map(ImpactValue)
            .ok_or_else(|| err("value out of range"))
    }
}

impl fmt::Display for ImpactValue {
    /// Canonical form: minimal digits, no trailing zeros, `0` for zero.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / SCALE;
        let frac = self.0 % SCALE;
        if frac == 0 {
            return write!(f, "{whole}");
        }
        let digits = format!("{frac:06}");
        write!(f, "{whole}.{}", digits.trim_end_matches('0'))
    }
}

impl FromStr for ImpactValue {
    type Err = ParseDecimalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ImpactValue::parse(s)
    }
}

impl Add for ImpactValue {
    type Output = ImpactValue;

    fn add(self, rhs: Self) -> Self {
        self.checked_add(rhs).expect("ImpactValue overflow")
    }
}

impl Sum for ImpactValue {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ImpactValue::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a ImpactValue> for ImpactValue {
    fn sum<I: Iterator<Item = &'a ImpactValue>>(iter: I) -> Self {
        iter.copied().sum()
    }
}

impl Serialize for ImpactValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ImpactValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ImpactValue::parse(&s).map_err(serde::de::Error::custom)
    }
}
