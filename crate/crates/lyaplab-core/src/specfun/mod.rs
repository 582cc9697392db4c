//! Special functions: modified Bessel K at real and complex order, its order
//! derivative, digamma, upper incomplete gamma, and exact Bernoulli numbers.
//!
//! Branch selection for K follows the argument/order layout: a power series
//! through the connection formula on small arguments away from integer order,
//! a logarithmic series at integer order, and the cosh-kernel integral
//! everywhere else. Every evaluation reports the branch it took and an error
//! estimate.

mod bessel;
mod gamma;

pub use bessel::{
    bessel_k, bessel_k_complex, bessel_k_order_derivative, bessel_k_tilde, f_ratio, f_ratio_c,
    f_ratio_dd, f_ratio_zero_dd, DdRatioCtx,
};
pub use gamma::{arg_gamma_one_plus_it, digamma, digamma_real, gamma_real, gamma_upper, lngamma_complex, rgamma_real};

use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use std::sync::OnceLock;

/// How a value was computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Series,
    Integral,
    LogSeries,
    Differenced,
    /// Small-argument expansion took over where direct evaluation would
    /// under- or overflow.
    Asymptotic,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Series => "series",
            Method::Integral => "integral",
            Method::LogSeries => "log-series",
            Method::Differenced => "differenced",
            Method::Asymptotic => "asymptotic",
        };
        f.write_str(s)
    }
}

/// A computed value with an error estimate and the branch that produced it.
#[derive(Clone, Copy, Debug)]
pub struct SpecialEval<T> {
    pub value: T,
    pub err_est: f64,
    pub method: Method,
}

/// Tolerances and budgets shared by the evaluation routines.
#[derive(Clone, Copy, Debug)]
pub struct PrecisionPolicy {
    /// Target relative tolerance, > 0.
    pub rel_tol: f64,
    /// Target absolute tolerance, > 0.
    pub abs_tol: f64,
    /// Maximum refinement depth for adaptive quadrature, >= 8.
    pub max_subdivisions: usize,
    /// Step used when differencing in the order direction, in (0, 0.1).
    pub order_step: f64,
}

impl Default for PrecisionPolicy {
    fn default() -> Self {
        PrecisionPolicy { rel_tol: 1e-12, abs_tol: 1e-250, max_subdivisions: 14, order_step: 0.01 }
    }
}

impl PrecisionPolicy {
    pub fn validate(&self) -> Result<(), SpecFunError> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(SpecFunError::OutOfRange { what: "policy tolerances must be positive" });
        }
        if self.max_subdivisions < 8 {
            return Err(SpecFunError::OutOfRange { what: "policy max_subdivisions must be >= 8" });
        }
        if !(self.order_step > 0.0 && self.order_step < 0.1) {
            return Err(SpecFunError::StepTooSmall { h: self.order_step });
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SpecFunError {
    #[error("argument must be positive: {what} = {value}")]
    NonPositiveArgument { what: &'static str, value: f64 },
    #[error("tolerance not met: achieved {achieved:e}, wanted {wanted:e}")]
    ToleranceNotMet { achieved: f64, wanted: f64 },
    #[error("evaluation at or too close to a pole: {what}")]
    PoleArgument { what: &'static str },
    #[error("invalid order: {what}")]
    InvalidOrder { what: &'static str },
    #[error("out of range: {what}")]
    OutOfRange { what: &'static str },
    #[error("differencing step too small or invalid: {h}")]
    StepTooSmall { h: f64 },
}

const BERNOULLI_CAP: usize = 30;

fn bernoulli_table() -> &'static Vec<BigRational> {
    static CACHE: OnceLock<Vec<BigRational>> = OnceLock::new();
    CACHE.get_or_init(|| {
        // B_m via the defining recurrence sum_{k=0}^{m} C(m+1,k) B_k = 0
        let n = 2 * BERNOULLI_CAP;
        let mut b: Vec<BigRational> = Vec::with_capacity(n + 1);
        b.push(BigRational::one());
        for m in 1..=n {
            // C(m+1, k) running binomial
            let mut acc = BigRational::zero();
            let mut binom = num_bigint::BigInt::one(); // C(m+1, 0)
            for (k, bk) in b.iter().enumerate().take(m) {
                acc += BigRational::from_integer(binom.clone()) * bk;
                binom = binom * (m as i64 + 1 - k as i64) / (k as i64 + 1);
            }
            let c = BigRational::from_integer(num_bigint::BigInt::from(m as i64 + 1));
            b.push(-acc / c);
        }
        b
    })
}

/// Exact Bernoulli number B_{2j} as a rational, for 1 <= j <= 30.
pub fn bernoulli_even(j: usize) -> Result<BigRational, SpecFunError> {
    if j == 0 || j > BERNOULLI_CAP {
        return Err(SpecFunError::OutOfRange { what: "bernoulli_even index must be in 1..=30" });
    }
    Ok(bernoulli_table()[2 * j].clone())
}

/// B_{2j} rounded to f64.
pub fn bernoulli_even_f64(j: usize) -> Result<f64, SpecFunError> {
    let b = bernoulli_even(j)?;
    let num = b.numer().to_f64().unwrap_or(f64::NAN);
    let den = b.denom().to_f64().unwrap_or(f64::NAN);
    if num.is_finite() && den.is_finite() {
        Ok(num / den)
    } else {
        // fall back through a string cast for the giant numerators
        Ok(b.to_f64().unwrap_or(f64::NAN))
    }
}

/// Rising factorial (nu)_k = nu (nu+1) ... (nu+k-1), with ()_0 = 1.
pub fn pochhammer(nu: f64, k: u32) -> f64 {
    let mut p = 1.0;
    for j in 0..k {
        p *= nu + j as f64;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;

    fn ratio(num: i64, den: i64) -> BigRational {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    #[test]
    fn bernoulli_small_exact() {
        assert_eq!(bernoulli_even(1).unwrap(), ratio(1, 6));
        assert_eq!(bernoulli_even(2).unwrap(), ratio(-1, 30));
        assert_eq!(bernoulli_even(3).unwrap(), ratio(1, 42));
        assert_eq!(bernoulli_even(4).unwrap(), ratio(-1, 30));
        assert_eq!(bernoulli_even(5).unwrap(), ratio(5, 66));
        assert_eq!(bernoulli_even(6).unwrap(), ratio(-691, 2730));
        assert_eq!(bernoulli_even(7).unwrap(), ratio(7, 6));
        assert_eq!(bernoulli_even(8).unwrap(), ratio(-3617, 510));
    }

    #[test]
    fn bernoulli_large_exact() {
        // B_30 and B_60 against an independently computed table
        let b30 = bernoulli_even(15).unwrap();
        assert_eq!(*b30.numer(), BigInt::from(8615841276005i64));
        assert_eq!(*b30.denom(), BigInt::from(14322i64));
        let b60 = bernoulli_even(30).unwrap();
        assert_eq!(
            b60.numer().to_string(),
            "-1215233140483755572040304994079820246041491"
        );
        assert_eq!(b60.denom().to_string(), "56786730");
    }

    #[test]
    fn bernoulli_range_checks() {
        assert!(bernoulli_even(0).is_err());
        assert!(bernoulli_even(31).is_err());
        assert!((bernoulli_even_f64(1).unwrap() - 1.0 / 6.0).abs() < 1e-16);
    }

    #[test]
    fn pochhammer_basic() {
        assert_eq!(pochhammer(3.0, 0), 1.0);
        assert_eq!(pochhammer(3.0, 4), 360.0);
        assert_eq!(pochhammer(-0.5, 2), -0.25);
    }
}
