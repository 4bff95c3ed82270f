//! Numeric abstraction shared by the scoring and accounting code.
//!
//! Metrics and costs are ratios of counts, so every computation can be
//! carried out either in floating point or exactly in rationals. Exact
//! instantiations are what the oracle tests compare against.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// A scalar usable for metric and cost arithmetic: `f32`, `f64` or an exact
/// rational.
pub trait Scalar: Num + Clone + PartialOrd + Debug + ToPrimitive + Send + Sync + 'static {
    fn from_count(n: u64) -> Self;

    /// Parses a plain decimal literal such as `"0.001"` or `"12"`.
    fn parse_decimal(s: &str) -> Option<Self>;

    fn ratio(num: u64, den: u64) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Rounds half away from zero to `places` decimals.
    fn round_places(&self, places: usize) -> f64 {
        let scale = 10f64.powi(places as i32);
        (self.to_f64_lossy() * scale).round() / scale
    }
}

impl Scalar for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }

    fn parse_decimal(s: &str) -> Option<Self> {
        let v: f64 = s.trim().parse().ok()?;
        v.is_finite().then_some(v)
    }
}

impl Scalar for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }

    fn parse_decimal(s: &str) -> Option<Self> {
        let v: f32 = s.trim().parse().ok()?;
        v.is_finite().then_some(v)
    }
}

impl Scalar for Ratio<i64> {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(i64::from_u64(n).expect("count exceeds i64"))
    }

    fn parse_decimal(s: &str) -> Option<Self> {
        parse_decimal_ratio(s)
    }

    // Rounded on the exact value, so 0.26785 becomes 0.2679 regardless of
    // binary representation.
    fn round_places(&self, places: usize) -> f64 {
        let scale = Ratio::from_integer(10i64.pow(places as u32));
        let units = (self * scale).round().to_integer();
        units as f64 / 10f64.powi(places as i32)
    }
}

fn parse_decimal_ratio(s: &str) -> Option<Ratio<i64>> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part
        .chars()
        .chain(frac_part.chars())
        .all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: i64 = if digits.is_empty() {
        0
    } else {
        digits.parse().ok()?
    };
    let denom = 10i64.checked_pow(u32::try_from(frac_part.len()).ok()?)?;
    let r = Ratio::new(numer, denom);
    Some(if neg { -r } else { r })
}

/// Rounds half away from zero to `places` decimals and formats the result.
pub fn format_fixed<T: Scalar>(value: &T, places: usize) -> String {
    format!("{:.*}", places, value.round_places(places))
}
