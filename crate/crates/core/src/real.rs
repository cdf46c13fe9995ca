//! Scalar types used by the exponent calculus.
//!
//! [`Real`] keeps a parameter exact when it was given as a rational (a
//! decimal literal or a fraction such as `2/3`), so that interval endpoint
//! tests are decided by exact arithmetic. [`ExtReal`] adds an explicit
//! positive infinity for quantities whose positive-part denominators vanish.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_rational::Rational64;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub, ToPrimitive, Zero};

/// A real parameter, exact when possible.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Real {
    Exact(Rational64),
    Float(f64),
}

impl Real {
    pub fn ratio(num: i64, den: i64) -> Self {
        Real::Exact(Rational64::new(num, den))
    }

    pub fn int(v: i64) -> Self {
        Real::Exact(Rational64::from_integer(v))
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Real::Exact(r) => r.to_f64().unwrap_or(f64::NAN),
            Real::Float(x) => x,
        }
    }

    pub fn exact(self) -> Option<Rational64> {
        match self {
            Real::Exact(r) => Some(r),
            Real::Float(_) => None,
        }
    }

    pub fn is_finite(self) -> bool {
        match self {
            Real::Exact(_) => true,
            Real::Float(x) => x.is_finite(),
        }
    }

    fn lift2(
        self,
        other: Real,
        exact: impl Fn(&Rational64, &Rational64) -> Option<Rational64>,
        float: impl Fn(f64, f64) -> f64,
    ) -> Real {
        if let (Real::Exact(a), Real::Exact(b)) = (self, other) {
            if let Some(r) = exact(&a, &b) {
                return Real::Exact(r);
            }
        }
        Real::Float(float(self.to_f64(), other.to_f64()))
    }

    pub fn add(self, o: Real) -> Real {
        self.lift2(o, |a, b| a.checked_add(b), |a, b| a + b)
    }

    pub fn sub(self, o: Real) -> Real {
        self.lift2(o, |a, b| a.checked_sub(b), |a, b| a - b)
    }

    pub fn mul(self, o: Real) -> Real {
        self.lift2(o, |a, b| a.checked_mul(b), |a, b| a * b)
    }

    /// Division; an exact zero divisor falls through to IEEE semantics.
    pub fn div(self, o: Real) -> Real {
        self.lift2(
            o,
            |a, b| if b.is_zero() { None } else { a.checked_div(b) },
            |a, b| a / b,
        )
    }

    /// Exact comparison when both sides are exact, plain float comparison
    /// otherwise. `None` only for NaN.
    pub fn compare(self, o: Real) -> Option<Ordering> {
        if let (Real::Exact(a), Real::Exact(b)) = (self, o) {
            return Some(a.cmp(&b));
        }
        self.to_f64().partial_cmp(&o.to_f64())
    }

    pub fn lt(self, o: Real) -> bool {
        self.compare(o) == Some(Ordering::Less)
    }

    pub fn le(self, o: Real) -> bool {
        matches!(self.compare(o), Some(Ordering::Less | Ordering::Equal))
    }

    pub fn gt(self, o: Real) -> bool {
        o.lt(self)
    }

    pub fn is_positive(self) -> bool {
        self.gt(Real::int(0))
    }
}

impl From<f64> for Real {
    fn from(x: f64) -> Self {
        Real::Float(x)
    }
}

impl From<i64> for Real {
    fn from(x: i64) -> Self {
        Real::int(x)
    }
}

impl fmt::Display for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Real::Exact(r) if *r.denom() == 1 => write!(f, "{}", r.numer()),
            Real::Exact(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            Real::Float(x) => write!(f, "{}", crate::report::fmt_num(*x)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot parse `{0}` as a real number")]
pub struct ParseRealError(pub String);

impl FromStr for Real {
    type Err = ParseRealError;

    /// Accepts integers, fractions `a/b` and decimal literals (kept exact
    /// when they fit in 64-bit rationals), plus anything `f64` parses.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let err = || ParseRealError(s.to_string());
        if let Some((a, b)) = t.split_once('/') {
            let a: Real = a.parse()?;
            let b: Real = b.parse()?;
            if b.to_f64() == 0.0 {
                return Err(err());
            }
            return Ok(a.div(b));
        }
        if let Some(r) = parse_decimal(t) {
            return Ok(Real::Exact(r));
        }
        let x: f64 = t.parse().map_err(|_| err())?;
        if x.is_nan() {
            return Err(err());
        }
        Ok(Real::Float(x))
    }
}

/// `[-]digits[.digits][e[-]digits]` as an exact rational, if it fits.
fn parse_decimal(t: &str) -> Option<Rational64> {
    let (mantissa, exp) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], t[i + 1..].parse::<i32>().ok()?),
        None => (t, 0),
    };
    let (neg, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
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
    let mut num: i64 = digits.trim_start_matches('0').parse().unwrap_or(0);
    if digits.trim_start_matches('0').len() > 18 {
        return None;
    }
    let scale = exp - frac_part.len() as i32;
    let mut den: i64 = 1;
    if scale >= 0 {
        num = num.checked_mul(10i64.checked_pow(scale as u32)?)?;
    } else {
        den = 10i64.checked_pow((-scale) as u32)?;
    }
    if neg {
        num = -num;
    }
    Some(Rational64::new(num, den))
}

/// A real number or `+∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

impl ExtReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(x) => Some(x),
            ExtReal::Infinite => None,
        }
    }

    /// `num / den₊`, infinite when the positive part vanishes.
    pub fn over_positive_part(num: f64, den: f64) -> Self {
        if den > 0.0 {
            ExtReal::Finite(num / den)
        } else {
            ExtReal::Infinite
        }
    }

    pub fn min(self, other: ExtReal) -> ExtReal {
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a.min(b)),
            (ExtReal::Finite(a), ExtReal::Infinite) | (ExtReal::Infinite, ExtReal::Finite(a)) => {
                ExtReal::Finite(a)
            }
            (ExtReal::Infinite, ExtReal::Infinite) => ExtReal::Infinite,
        }
    }

    /// Strict `self > x` for a finite `x`.
    pub fn exceeds(self, x: f64) -> bool {
        match self {
            ExtReal::Finite(a) => a > x,
            ExtReal::Infinite => true,
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(x) => write!(f, "{}", crate::report::fmt_num(*x)),
            ExtReal::Infinite => write!(f, "inf"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_literals_are_exact() {
        assert_eq!("0.2".parse::<Real>().unwrap(), Real::ratio(1, 5));
        assert_eq!("-1.25e1".parse::<Real>().unwrap(), Real::ratio(-25, 2));
        assert_eq!("2/3".parse::<Real>().unwrap(), Real::ratio(2, 3));
        assert_eq!("3".parse::<Real>().unwrap(), Real::int(3));
        assert!(matches!("1e300".parse::<Real>().unwrap(), Real::Float(_)));
        assert!("abc".parse::<Real>().is_err());
        assert!("1/0".parse::<Real>().is_err());
    }

    #[test]
    fn exact_comparison_is_exact() {
        let third = Real::ratio(1, 3);
        let m_minus_q = Real::int(1).sub(Real::ratio(2, 3));
        assert_eq!(m_minus_q.compare(third), Some(Ordering::Equal));
        // the float route would not be equal
        let f = Real::from(1.0).sub(Real::from(2.0 / 3.0));
        assert_ne!(f.to_f64(), 1.0 / 3.0);
    }

    #[test]
    fn overflow_falls_back_to_float() {
        let big = Real::Exact(Rational64::new(i64::MAX / 2, 1));
        let p = big.mul(big);
        assert!(matches!(p, Real::Float(_)));
        assert!(p.to_f64() > 1e36);
    }

    #[test]
    fn ext_real_min() {
        assert_eq!(
            ExtReal::Finite(2.0).min(ExtReal::Infinite),
            ExtReal::Finite(2.0)
        );
        assert_eq!(ExtReal::Infinite.min(ExtReal::Infinite), ExtReal::Infinite);
        assert_eq!(ExtReal::over_positive_part(1.0, 0.0), ExtReal::Infinite);
        assert_eq!(ExtReal::over_positive_part(1.0, -3.0), ExtReal::Infinite);
    }
}
