//! Exact nonnegative rationals for weights, scores and the offload constant.

use alloc::string::String;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedMul, Zero};

/// A nonnegative rational number backed by `u128` numerator/denominator.
///
/// Comparison never overflows. Arithmetic saturates to [`Rational::MAX`]
/// when the exact result does not fit.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational(Ratio<u128>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid rational `{0}`: expected an integer, a decimal like `0.25`, a fraction like `3/4`, or `max`")]
pub struct ParseRationalError(pub String);

impl Rational {
    pub const ZERO: Rational = Rational(Ratio::new_raw(0, 1));
    pub const ONE: Rational = Rational(Ratio::new_raw(1, 1));
    /// Largest representable value; used as the "never offload" sentinel.
    pub const MAX: Rational = Rational(Ratio::new_raw(u128::MAX, 1));

    pub fn new(numer: u128, denom: u128) -> Self {
        assert!(denom != 0, "zero denominator");
        Rational(Ratio::new(numer, denom))
    }

    pub fn from_integer(n: u128) -> Self {
        Rational(Ratio::from_integer(n))
    }

    pub fn numer(&self) -> u128 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u128 {
        *self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn saturating_add(self, rhs: Self) -> Self {
        self.0.checked_add(&rhs.0).map(Rational).unwrap_or(Self::MAX)
    }

    pub fn saturating_mul(self, rhs: Self) -> Self {
        self.0.checked_mul(&rhs.0).map(Rational).unwrap_or(Self::MAX)
    }

    pub fn saturating_mul_int(self, rhs: u128) -> Self {
        self.saturating_mul(Rational::from_integer(rhs))
    }

    /// Exact comparison of `self / divisor` against `other`.
    ///
    /// `divisor` must be nonzero.
    pub fn cmp_divided(&self, divisor: u128, other: &Rational) -> Ordering {
        assert!(divisor != 0, "zero divisor");
        // self.n / (self.d * divisor)  vs  other.n / other.d
        //   <=>  self.n * other.d  vs  other.n * self.d * divisor
        let lhs = self.numer().checked_mul(other.denom());
        let rhs = other.numer().checked_mul(self.denom()).and_then(|v| v.checked_mul(divisor));
        if let (Some(l), Some(r)) = (lhs, rhs) {
            return l.cmp(&r);
        }
        let l = BigUint::from(self.numer()) * BigUint::from(other.denom());
        let r = BigUint::from(other.numer()) * BigUint::from(self.denom()) * BigUint::from(divisor);
        l.cmp(&r)
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }
}

impl Default for Rational {
    fn default() -> Self {
        Self::ZERO
    }
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rational {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp(&other.0)
    }
}

impl From<u64> for Rational {
    fn from(v: u64) -> Self {
        Rational::from_integer(v as u128)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::MAX {
            f.write_str("max")
        } else if self.is_integer() {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Rational {
    type Err = ParseRationalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseRationalError(s.into());
        let t = s.trim();
        if t == "max" || t == "inf" {
            return Ok(Self::MAX);
        }
        if let Some((n, d)) = t.split_once('/') {
            let n: u128 = n.trim().parse().map_err(|_| err())?;
            let d: u128 = d.trim().parse().map_err(|_| err())?;
            if d == 0 {
                return Err(err());
            }
            return Ok(Rational::new(n, d));
        }
        if let Some((int, frac)) = t.split_once('.') {
            if frac.is_empty() && int.is_empty() {
                return Err(err());
            }
            if !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err());
            }
            let int: u128 = if int.is_empty() { 0 } else { int.parse().map_err(|_| err())? };
            let frac_digits = frac.len() as u32;
            let scale = 10u128.checked_pow(frac_digits).ok_or_else(err)?;
            let frac: u128 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| err())? };
            let numer = int.checked_mul(scale).and_then(|v| v.checked_add(frac)).ok_or_else(err)?;
            return Ok(Rational::new(numer, scale));
        }
        if !t.bytes().all(|b| b.is_ascii_digit()) || t.is_empty() {
            return Err(err());
        }
        t.parse::<u128>().map(Rational::from_integer).map_err(|_| err())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn parses_common_forms() {
        assert_eq!("0.5".parse::<Rational>().unwrap(), Rational::new(1, 2));
        assert_eq!("3/4".parse::<Rational>().unwrap(), Rational::new(3, 4));
        assert_eq!("12".parse::<Rational>().unwrap(), Rational::from_integer(12));
        assert_eq!(".25".parse::<Rational>().unwrap(), Rational::new(1, 4));
        assert_eq!("max".parse::<Rational>().unwrap(), Rational::MAX);
        assert!("-1".parse::<Rational>().is_err());
        assert!("1/0".parse::<Rational>().is_err());
        assert!("abc".parse::<Rational>().is_err());
    }

    #[test]
    fn display_round_trips() {
        for r in [Rational::new(7, 3), Rational::ZERO, Rational::from_integer(300), Rational::MAX] {
            assert_eq!(r.to_string().parse::<Rational>().unwrap(), r);
        }
    }

    #[test]
    fn divided_comparison_is_exact_past_u128() {
        let score = Rational::from_integer(u128::MAX);
        // MAX / 3 vs MAX/3 exactly (MAX is divisible by 3).
        assert_eq!(score.cmp_divided(3, &Rational::from_integer(u128::MAX / 3)), Ordering::Equal);
        let c = Rational::new(u128::MAX / 3, 7);
        assert_eq!(score.cmp_divided(3, &c), Ordering::Greater);
        assert_eq!(Rational::new(300, 1).cmp_divided(600, &Rational::new(1, 2)), Ordering::Equal);
    }

    #[test]
    fn comparison_with_huge_values_does_not_overflow() {
        let a = Rational::new(u128::MAX - 1, u128::MAX);
        let b = Rational::new(u128::MAX - 2, u128::MAX - 1);
        assert!(a > b);
        assert!(Rational::MAX > Rational::new(u128::MAX, 2));
    }
}
