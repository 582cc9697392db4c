//! Zeros of K at purely imaginary order and the residues of the ratio
//! x K_{alpha-1}/K_alpha at those zeros.
//!
//! Below x = 2e^{-gamma} the phase theta0(nu) = nu log(x/2) - arg Gamma(1+i nu)
//! decreases strictly in nu, and the n-th zero of nu -> K_{i nu}(x) lies in an
//! explicit window around the solution of theta0 = -n pi. Each window is
//! located by bisection on the phase and the zero inside it is polished by
//! safeguarded Newton on K itself.

use crate::specfun::{
    arg_gamma_one_plus_it, bessel_k_complex, bessel_k_order_derivative, PrecisionPolicy,
    SpecFunError,
};
use num_complex::Complex64;
use thiserror::Error;

const EULER: f64 = 0.577215664901532861;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("argument {x} outside the supported interval (0, 1.1)")]
    ArgumentTooLarge { x: f64 },
    #[error("could not isolate zero {n}")]
    BracketFailure { n: u32 },
    #[error("zero carries residual {residual:e}, too large to trust")]
    UnconvergedZero { residual: f64 },
    #[error("alpha^2 + nu_1^2 vanishes")]
    PoleCollision,
    #[error("|alpha| = {abs_alpha} is not below nu_2 = {nu2}")]
    OutsideValidStrip { abs_alpha: f64, nu2: f64 },
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
}

/// One zero of nu -> K_{i nu}(x): index, argument, location, and the size of
/// |K_{i nu}| left after convergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralZero {
    pub n: u32,
    pub x: f64,
    pub nu: f64,
    pub residual: f64,
}

/// Residue of alpha -> x K_{alpha-1}(x)/K_alpha(x) at alpha = i nu_n, together
/// with the order derivative of K there.
#[derive(Debug, Clone, Copy)]
pub struct ResidueData {
    pub zero: SpectralZero,
    pub residue: Complex64,
    pub ktilde: Complex64,
}

impl ResidueData {
    /// Distance of residue * L^2 from its small-argument limit i pi, with
    /// L = log(2/x) - gamma. Only meaningful for the first zero.
    pub fn dominant_pole_deviation(&self) -> Option<f64> {
        if self.zero.n != 1 {
            return None;
        }
        let l = log_scale(self.zero.x);
        Some((self.residue * l * l - Complex64::new(0.0, std::f64::consts::PI)).norm())
    }
}

/// The logarithmic scale L(x) = log(2/x) - gamma governing the zero spacing.
pub fn log_scale(x: f64) -> f64 {
    (2.0 / x).ln() - EULER
}

fn theta0(nu: f64, x: f64) -> f64 {
    nu * (0.5 * x).ln() - arg_gamma_one_plus_it(nu)
}

/// Solve theta0(nu) = target by bisection; theta0 decreases strictly on the
/// supported x range. `lo` must satisfy theta0(lo) > target.
fn phase_point(x: f64, target: f64, lo0: f64, n: u32) -> Result<f64, SpectralError> {
    let mut lo = lo0;
    let mut hi = (lo0 * 2.0).max(0.5);
    let mut tries = 0;
    while theta0(hi, x) > target {
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(SpectralError::BracketFailure { n });
        }
    }
    for _ in 0..90 {
        let mid = 0.5 * (lo + hi);
        if theta0(mid, x) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-11 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// First `count` zeros of nu -> K_{i nu}(x), in increasing order.
pub fn zeros_of_k(
    x: f64,
    count: u32,
    policy: &PrecisionPolicy,
) -> Result<Vec<SpectralZero>, SpectralError> {
    policy.validate()?;
    if !(x > 0.0 && x < 1.1) {
        return Err(SpectralError::ArgumentTooLarge { x });
    }
    let k_at = |nu: f64| -> Result<Complex64, SpectralError> {
        Ok(bessel_k_complex(Complex64::new(0.0, nu), x, policy)?.value)
    };
    let dk_at = |nu: f64| -> Result<Complex64, SpectralError> {
        Ok(bessel_k_order_derivative(Complex64::new(0.0, nu), x, policy)?.value)
    };
    let window = (x.cosh() - 1.0).asin();
    let mut out: Vec<SpectralZero> = Vec::with_capacity(count as usize);
    let mut seed = 1e-8;
    for n in 1..=count {
        let target = -(n as f64) * std::f64::consts::PI;
        // window edges: theta0 decreasing, so the +window edge is the left one
        let mut a = phase_point(x, target + window, seed, n)?;
        let mut b = phase_point(x, target - window, a, n)?;
        let fa = k_at(a)?.re;
        let fb = k_at(b)?.re;
        if fa == 0.0 || fb == 0.0 || fa.signum() == fb.signum() {
            return Err(SpectralError::BracketFailure { n });
        }
        let fa_neg = fa < 0.0;
        let mut nu = 0.5 * (a + b);
        let mut kv = k_at(nu)?;
        let mut it = 0;
        while kv.re != 0.0 && b - a > f64::EPSILON * b {
            if (kv.re < 0.0) == fa_neg {
                a = nu;
            } else {
                b = nu;
            }
            let mut cand = f64::NAN;
            if it < 25 {
                // d/dnu K_{i nu} = i dK/dalpha, real on the imaginary axis
                let slope = -dk_at(nu)?.im;
                if slope != 0.0 {
                    cand = nu - kv.re / slope;
                }
            }
            if !(cand > a && cand < b) {
                cand = 0.5 * (a + b);
            }
            if cand == nu {
                break;
            }
            nu = cand;
            kv = k_at(nu)?;
            it += 1;
            if it > 110 {
                return Err(SpectralError::BracketFailure { n });
            }
        }
        let residual = kv.norm();
        let scale = dk_at(nu)?.norm();
        if !(residual <= 1e-10 * scale) {
            return Err(SpectralError::BracketFailure { n });
        }
        out.push(SpectralZero { n, x, nu, residual });
        seed = b;
    }
    Ok(out)
}

/// Residue at a converged zero: x K_{1 - i nu}(x) / dK, where dK is the order
/// derivative of K at i nu (equal to the regularized derivative there).
pub fn residue_at_zero(
    zero: &SpectralZero,
    policy: &PrecisionPolicy,
) -> Result<ResidueData, SpectralError> {
    policy.validate()?;
    let dk = bessel_k_order_derivative(Complex64::new(0.0, zero.nu), zero.x, policy)?;
    if !(zero.residual <= 1e-9 * dk.value.norm()) {
        return Err(SpectralError::UnconvergedZero { residual: zero.residual });
    }
    let k1 = bessel_k_complex(Complex64::new(1.0, -zero.nu), zero.x, policy)?;
    let residue = zero.x * k1.value / dk.value;
    Ok(ResidueData { zero: *zero, residue, ktilde: dk.value })
}

/// Contribution of the conjugate pair of poles at +-i nu_1 to the ratio
/// x K_{alpha-1}/K_alpha: 2i R_1 nu_1 / (alpha^2 + nu_1^2), with R_1 the
/// residue at +i nu_1. Requires |alpha| inside the second zero.
pub fn pole_pair_contribution(
    x: f64,
    alpha: Complex64,
    policy: &PrecisionPolicy,
) -> Result<Complex64, SpectralError> {
    let zeros = zeros_of_k(x, 2, policy)?;
    let nu1 = zeros[0].nu;
    let nu2 = zeros[1].nu;
    if !(alpha.norm() < nu2) {
        return Err(SpectralError::OutsideValidStrip { abs_alpha: alpha.norm(), nu2 });
    }
    let den = alpha * alpha + nu1 * nu1;
    if den.norm() <= 1e-10 * nu1 * nu1 {
        return Err(SpectralError::PoleCollision);
    }
    let r = residue_at_zero(&zeros[0], policy)?;
    Ok(Complex64::new(0.0, 2.0) * r.residue * nu1 / den)
}
