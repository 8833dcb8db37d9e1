//! Probabilities stored as base-10 logarithms.
//!
//! Attack success probabilities routinely sit far below the smallest
//! positive `f64` (1e-189 for a 1% attacker facing 120 confirmations,
//! 1e-500 and beyond in the incomplete-gamma grid). [`TailProb`] keeps the
//! logarithm and does all arithmetic in the log domain.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const LN_10: f64 = std::f64::consts::LN_10;

#[derive(Debug, Error, PartialEq)]
#[error("probability {0} outside [0, 1]")]
pub struct DomainError(pub f64);

#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailProb {
    log10_value: f64,
    is_zero: bool,
}

impl TailProb {
    pub const ZERO: Self = Self {
        log10_value: f64::NEG_INFINITY,
        is_zero: true,
    };
    pub const ONE: Self = Self {
        log10_value: 0.0,
        is_zero: false,
    };

    pub fn from_linear(x: f64) -> Result<Self, DomainError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(DomainError(x));
        }
        Ok(if x == 0.0 { Self::ZERO } else { Self::from_log10(x.log10()) })
    }

    /// From a base-10 logarithm. Values above zero are clamped to one.
    pub fn from_log10(log10_value: f64) -> Self {
        if log10_value == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        debug_assert!(!log10_value.is_nan());
        Self {
            log10_value: log10_value.min(0.0),
            is_zero: false,
        }
    }

    /// From a natural logarithm.
    pub fn from_ln(ln_value: f64) -> Self {
        Self::from_log10(ln_value / LN_10)
    }

    pub fn log10(&self) -> f64 {
        self.log10_value
    }

    pub fn ln(&self) -> f64 {
        self.log10_value * LN_10
    }

    pub fn is_zero(&self) -> bool {
        self.is_zero
    }

    /// Linear value; underflows to 0 below ~1e-308.
    pub fn to_linear(&self) -> f64 {
        if self.is_zero {
            0.0
        } else {
            10f64.powf(self.log10_value)
        }
    }

    pub fn mul(self, other: Self) -> Self {
        if self.is_zero || other.is_zero {
            return Self::ZERO;
        }
        Self::from_log10(self.log10_value + other.log10_value)
    }

    /// `self + other`, clamped to one.
    pub fn add(self, other: Self) -> Self {
        if self.is_zero {
            return other;
        }
        if other.is_zero {
            return self;
        }
        Self::from_ln(log_add_exp(self.ln(), other.ln()))
    }

    /// `1 - self`.
    pub fn complement(self) -> Self {
        if self.is_zero {
            return Self::ONE;
        }
        let ln_x = self.ln();
        if ln_x == 0.0 {
            return Self::ZERO;
        }
        if ln_x < -std::f64::consts::LN_2 {
            // x < 1/2: ln(1 - x) via log1p keeps tiny x exact.
            Self::from_ln((-ln_x.exp()).ln_1p())
        } else {
            Self::from_ln((-ln_x.exp_m1()).ln())
        }
    }

    /// `self^k` for real `k >= 0`.
    pub fn powf(self, k: f64) -> Self {
        if k == 0.0 {
            return Self::ONE;
        }
        if self.is_zero {
            return Self::ZERO;
        }
        Self::from_log10(self.log10_value * k)
    }

    /// `1 - (1 - self)^k` for real `k >= 0`, evaluated without cancellation.
    ///
    /// The exponent is `m = k * -ln(1 - q)`; the result is `-expm1(-m)`, and
    /// for `m` below the smallest normal float it is `m` itself.
    pub fn complement_power(self, k: f64) -> Self {
        assert!(k >= 0.0, "exponent must be non-negative");
        if self.is_zero || k == 0.0 {
            return Self::ZERO;
        }
        if self.log10_value == 0.0 {
            return Self::ONE;
        }
        // ln(-ln(1 - q))
        let ln_q = self.ln();
        let ln_neg_log1m = if ln_q > -700.0 {
            let q = ln_q.exp();
            (-(-q).ln_1p()).ln()
        } else {
            // -ln(1 - q) = q (1 + q/2 + ...) and q < 1e-304 here.
            ln_q
        };
        let ln_m = k.ln() + ln_neg_log1m;
        if ln_m > 40.0 {
            return Self::ONE;
        }
        if ln_m < -700.0 {
            return Self::from_ln(ln_m);
        }
        let m = ln_m.exp();
        Self::from_ln((-(-m).exp_m1()).ln())
    }

    /// Sum of many probabilities, clamped to one.
    pub fn sum<I: IntoIterator<Item = Self>>(items: I) -> Self {
        let lns: Vec<f64> = items.into_iter().filter(|p| !p.is_zero).map(|p| p.ln()).collect();
        if lns.is_empty() {
            return Self::ZERO;
        }
        Self::from_ln(log_sum_exp(&lns))
    }
}

/// `ln(e^a + e^b)`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(sum(e^x))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl PartialOrd for TailProb {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self.is_zero, other.is_zero) {
            (true, true) => Some(Ordering::Equal),
            (true, false) => Some(Ordering::Less),
            (false, true) => Some(Ordering::Greater),
            _ => self.log10_value.partial_cmp(&other.log10_value),
        }
    }
}

impl fmt::Debug for TailProb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TailProb({self})")
    }
}

impl fmt::Display for TailProb {
    /// Scientific notation that works below the `f64` range, e.g. `6.80e-189`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero {
            return f.write_str("0");
        }
        let exp = self.log10_value.floor();
        let mut mantissa = 10f64.powf(self.log10_value - exp);
        let mut exp = exp as i64;
        if mantissa >= 9.995 {
            mantissa /= 10.0;
            exp += 1;
        }
        write!(f, "{mantissa:.2}e{exp}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn from_linear_cases() {
        assert_eq!(TailProb::from_linear(1.0).unwrap().log10(), 0.0);
        assert!(TailProb::from_linear(0.0).unwrap().is_zero());
        assert!((TailProb::from_linear(1e-35).unwrap().log10() + 35.0).abs() < 1e-12);
        assert_eq!(TailProb::from_linear(1.5), Err(DomainError(1.5)));
        assert!(TailProb::from_linear(-0.1).is_err());
        assert!(TailProb::from_linear(f64::NAN).is_err());
    }

    #[test]
    fn round_trip_representable_values() {
        for x in [1.0, 1e-5, 1e-50, 3.7e-300] {
            let back = TailProb::from_linear(x).unwrap().to_linear();
            assert!(((back - x) / x).abs() < 1e-9, "{x} -> {back}");
        }
    }

    #[test]
    fn complement_power_cases() {
        assert!(TailProb::ZERO.complement_power(1e6).is_zero());
        let half = TailProb::from_linear(0.5).unwrap();
        assert!((half.complement_power(1.0).to_linear() - 0.5).abs() < 1e-15);
        assert_eq!(TailProb::ONE.complement_power(3.0), TailProb::ONE);
        assert!(half.complement_power(0.0).is_zero());
    }

    #[test]
    fn complement_power_tiny_q_huge_k() {
        // Series oracle: 1-(1-q)^k = kq - C(k,2) q^2 + ..., kq = 1e-27 so the
        // second term is ~1e-54 relative.
        let q = TailProb::from_log10(-46.0);
        let got = q.complement_power(1e19);
        assert!((got.log10() + 27.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn complement_power_below_float_range() {
        let q = TailProb::from_log10(-400.0);
        let got = q.complement_power(1e10);
        assert!((got.log10() + 390.0).abs() < 1e-9);
    }

    #[test]
    fn complement_power_saturates() {
        let q = TailProb::from_linear(0.2).unwrap();
        let got = q.complement_power(2f64.powi(64));
        assert_eq!(got.log10(), 0.0);
        // moderate regime: 1 - 0.8^10
        let got = q.complement_power(10.0).to_linear();
        assert!((got - (1.0 - 0.8f64.powi(10))).abs() < 1e-14);
    }

    #[test]
    fn complement_and_add() {
        let a = TailProb::from_linear(0.25).unwrap();
        assert!((a.complement().to_linear() - 0.75).abs() < 1e-15);
        let tiny = TailProb::from_log10(-30.0);
        assert!((tiny.complement().ln() + 1e-30).abs() < 1e-40);
        assert!((a.add(a).to_linear() - 0.5).abs() < 1e-15);
        assert_eq!(TailProb::ONE.complement(), TailProb::ZERO);
        let s = TailProb::sum([TailProb::from_log10(-300.0); 10]);
        assert!((s.log10() + 299.0).abs() < 1e-12);
    }

    #[test]
    fn display_below_float_range() {
        assert_eq!(TailProb::from_log10(-188.0 - 0.16749108729376372).to_string(), "6.80e-189");
        assert_eq!(TailProb::ZERO.to_string(), "0");
        assert_eq!(TailProb::ONE.to_string(), "1.00e0");
    }

    proptest! {
        #[test]
        fn complement_power_matches_direct_formula(q in 1e-6f64..0.999, k in 0.0f64..200.0) {
            let got = TailProb::from_linear(q).unwrap().complement_power(k).to_linear();
            let want = 1.0 - (1.0 - q).powf(k);
            prop_assert!((got - want).abs() <= 1e-12 + 1e-9 * want);
        }

        #[test]
        fn mul_is_log_addition(a in -500.0f64..0.0, b in -500.0f64..0.0) {
            let p = TailProb::from_log10(a).mul(TailProb::from_log10(b));
            prop_assert!((p.log10() - (a + b)).abs() < 1e-9);
        }

        #[test]
        fn ordering_follows_log(a in -500.0f64..0.0, b in -500.0f64..0.0) {
            let (pa, pb) = (TailProb::from_log10(a), TailProb::from_log10(b));
            prop_assert_eq!(pa.partial_cmp(&pb), a.partial_cmp(&b));
        }
    }
}
