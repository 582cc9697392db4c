//! Closed forms for the diffusion limit: the Lyapunov exponent as a Bessel
//! ratio, the invariant density of the slope process, small-coupling
//! expansions with rational coefficients, and the CLT variance together with
//! its small-coupling constants.

use crate::dd::Dd;
use crate::quad::{tanh_sinh_lenient, QuadError};
use crate::specfun::{bessel_k, f_ratio, gamma_real, Method, PrecisionPolicy, SpecFunError, SpecialEval};
use std::cell::Cell;

const EULER: f64 = 0.577215664901532861;
/// Below this x the Bessel ratio is replaced by its assembled expansion.
const X_ASYMPTOTIC: f64 = 1e-8;
/// Distance to an integer below which the order counts as integer.
const INT_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum ExactError {
    #[error("invalid model parameters: {what}")]
    InvalidParams { what: &'static str },
    #[error("density evaluation point must be positive, got y = {y}")]
    NonPositivePoint { y: f64 },
    #[error("expansion coefficient has a pole: order within 1e-8 of {n}")]
    PoleOfCoefficient { n: u32 },
    #[error("fit grid too narrow: need at least 4 positive points spanning 2 decades")]
    GridTooNarrow,
    #[error("no singular fit in this index regime: {what}")]
    UnsupportedRegime { what: &'static str },
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

/// Parameters of the continuum model: noise amplitude sigma, index alpha,
/// coupling eps. The Bessel argument x and the drift shortcut delta are
/// always recomputed, never stored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    pub sigma: f64,
    pub alpha: f64,
    pub eps: f64,
}

impl ModelParams {
    pub fn new(sigma: f64, alpha: f64, eps: f64) -> Result<ModelParams, ExactError> {
        let p = ModelParams { sigma, alpha, eps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ExactError> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(ExactError::InvalidParams { what: "sigma must be positive and finite" });
        }
        if !self.alpha.is_finite() {
            return Err(ExactError::InvalidParams { what: "alpha must be finite" });
        }
        if !self.eps.is_finite() || self.eps == 0.0 {
            return Err(ExactError::InvalidParams { what: "eps must be nonzero and finite" });
        }
        Ok(())
    }

    /// Bessel argument 4|eps|/sigma^2.
    pub fn x(&self) -> f64 {
        4.0 * self.eps.abs() / (self.sigma * self.sigma)
    }

    /// Drift shortcut sigma^2 (1 - alpha)/2.
    pub fn delta(&self) -> f64 {
        0.5 * self.sigma * self.sigma * (1.0 - self.alpha)
    }
}

// ---- Lyapunov exponent ----

/// L(sigma, alpha, eps) = (sigma^2/4) x K_{alpha-1}(x)/K_alpha(x) at
/// x = 4|eps|/sigma^2. Even in eps. For x < 1e-8 the ratio is replaced by
/// the assembled small-x expansion and the result is tagged accordingly.
pub fn lyapunov(p: &ModelParams) -> Result<SpecialEval<f64>, ExactError> {
    p.validate()?;
    let x = p.x();
    let quarter_s2 = 0.25 * p.sigma * p.sigma;
    if x < X_ASYMPTOTIC {
        let r = expansion_for(p.alpha)?;
        let f = eval_expansion(&r, x);
        let err = expansion_tail_bound(&r, x) + f.abs() * 1e-15;
        return Ok(SpecialEval {
            value: quarter_s2 * f,
            err_est: quarter_s2 * err,
            method: Method::Asymptotic,
        });
    }
    let policy = PrecisionPolicy::default();
    let f = f_ratio(p.alpha, x, &policy)?;
    Ok(SpecialEval {
        value: quarter_s2 * f.value,
        err_est: quarter_s2 * f.err_est,
        method: f.method,
    })
}

// ---- invariant density of the slope process ----

/// Stationary density p(y) = y^{-1-alpha} exp(-(x/2)(y + 1/y)) / (2 K_alpha(x))
/// on y > 0, for eps > 0.
pub fn invariant_density(p: &ModelParams, y: f64) -> Result<f64, ExactError> {
    p.validate()?;
    if p.eps <= 0.0 {
        return Err(ExactError::InvalidParams { what: "density needs eps > 0" });
    }
    if !(y > 0.0) || !y.is_finite() {
        return Err(ExactError::NonPositivePoint { y });
    }
    let x = p.x();
    let ka = bessel_k(p.alpha, x, &PrecisionPolicy::default())?;
    let lnp = (-1.0 - p.alpha) * y.ln() - 0.5 * x * (y + 1.0 / y) - (2.0 * ka.value).ln();
    Ok(if lnp < -745.0 { 0.0 } else { lnp.exp() })
}

/// Distribution function of the stationary density. The y > 1 branch
/// integrates the mapped tail on (0, 1/y0) so both halves run over (0, 1].
pub fn invariant_cdf(p: &ModelParams, y0: f64) -> Result<f64, ExactError> {
    p.validate()?;
    if p.eps <= 0.0 {
        return Err(ExactError::InvalidParams { what: "density needs eps > 0" });
    }
    if !(y0 > 0.0) {
        return Ok(0.0);
    }
    let x = p.x();
    let half_x = 0.5 * x;
    let ka = bessel_k(p.alpha, x, &PrecisionPolicy::default())?.value;
    let piece = |pw: f64, hi: f64| -> f64 {
        let f = |t: f64| -> f64 {
            if t <= 0.0 {
                return 0.0;
            }
            let e = pw * t.ln() - half_x * (t + 1.0 / t);
            if e < -745.0 {
                0.0
            } else {
                e.exp()
            }
        };
        tanh_sinh_lenient(f, 0.0, hi, 1e-12, 1e-280, 12).value
    };
    let cdf = if y0 <= 1.0 {
        piece(-1.0 - p.alpha, y0) / (2.0 * ka)
    } else {
        1.0 - piece(p.alpha - 1.0, 1.0 / y0) / (2.0 * ka)
    };
    Ok(cdf.clamp(0.0, 1.0))
}

/// Mode of the stationary density, the positive root of the stationarity
/// condition of log p.
pub fn density_mode(p: &ModelParams) -> Result<f64, ExactError> {
    p.validate()?;
    if p.eps <= 0.0 {
        return Err(ExactError::InvalidParams { what: "density needs eps > 0" });
    }
    let x = p.x();
    let ap1 = 1.0 + p.alpha;
    Ok((-ap1 + (ap1 * ap1 + x * x).sqrt()) / x)
}

/// First moment of the stationary density, K_{alpha-1}(x)/K_alpha(x).
pub fn mean_y(p: &ModelParams) -> Result<f64, ExactError> {
    p.validate()?;
    if p.eps <= 0.0 {
        return Err(ExactError::InvalidParams { what: "density needs eps > 0" });
    }
    let l = lyapunov(p)?;
    Ok(l.value / p.eps.abs())
}

/// Moment of 1/Y under the stationary density, K_{alpha+1}(x)/K_alpha(x),
/// obtained from the three-term recurrence.
pub fn mean_inv_y(p: &ModelParams) -> Result<f64, ExactError> {
    let x = p.x();
    Ok(mean_y(p)? + 2.0 * p.alpha / x)
}

// ---- small-coupling expansion coefficients ----

/// Analytic expansion coefficients c_1..c_{j_max} at the given index, by
/// formal division of the two underlying Pochhammer series. Double-double
/// internally; poles at integer indices 1..j_max are rejected.
pub fn expansion_coefficients(alpha: f64, j_max: usize) -> Result<Vec<f64>, ExactError> {
    Ok(expansion_coefficients_dd(alpha, j_max)?.iter().map(|c| c.to_f64()).collect())
}

pub(crate) fn expansion_coefficients_dd(alpha: f64, j_max: usize) -> Result<Vec<Dd>, ExactError> {
    if j_max == 0 || j_max > 12 {
        return Err(ExactError::InvalidParams { what: "j_max must be in 1..=12" });
    }
    for n in 1..=j_max {
        if (alpha - n as f64).abs() < INT_TOL {
            return Err(ExactError::PoleOfCoefficient { n: n as u32 });
        }
    }
    let a = Dd::from_f64(alpha);
    // B_k = 1/(k! (1-a)_k 4^k), A_k = B_k / (k+1-a), k = 0..j_max-1
    let mut bs = Vec::with_capacity(j_max);
    let mut asv = Vec::with_capacity(j_max);
    let mut b = Dd::ONE;
    bs.push(b);
    asv.push(b.div(Dd::from_f64(1.0).sub(a)));
    for k in 1..j_max {
        let kf = k as f64;
        b = b.div(Dd::from_f64(4.0 * kf).mul(Dd::from_f64(kf).sub(a)));
        bs.push(b);
        asv.push(b.div(Dd::from_f64(kf + 1.0).sub(a)));
    }
    // series division q_k = A_k - sum_{m=1..k} B_m q_{k-m}
    let mut q: Vec<Dd> = Vec::with_capacity(j_max);
    for k in 0..j_max {
        let mut acc = asv[k];
        for m in 1..=k {
            acc = acc.sub(bs[m].mul(q[k - m]));
        }
        q.push(acc);
    }
    Ok(q.iter().map(|qk| qk.mul_f64(-0.5)).collect())
}

// ---- assembled expansion ----

/// Shape of the non-analytic term in the small-x expansion of the scaled
/// Lyapunov exponent (4/sigma^2) L.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SingularKind {
    /// coeff * (x/2)^exponent, exponent = 2 alpha
    Power { exponent: f64 },
    /// coeff * x^{2n} ln x
    PowerLog { n: u32 },
    /// coeff / (ln(2/x) - euler)
    InverseLog,
    /// constant coeff, present for negative index
    ConstantShift,
}

impl std::fmt::Display for SingularKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SingularKind::Power { .. } => "power",
            SingularKind::PowerLog { .. } => "power-log",
            SingularKind::InverseLog => "inverse-log",
            SingularKind::ConstantShift => "constant-shift",
        };
        f.write_str(s)
    }
}

/// Small-x expansion of (4/sigma^2) L: analytic part, one singular term, and
/// the order of the first omitted contribution.
#[derive(Clone, Debug)]
pub struct ExpansionResult {
    pub analytic_coeffs: Vec<(u32, f64)>,
    pub singular_coeff: f64,
    pub singular_kind: SingularKind,
    pub remainder_order: f64,
}

/// Cap on the analytic depth of the assembled expansion.
const J_CAP: usize = 3;

/// Assembles the small-x expansion of (4/sigma^2) L per index regime:
/// power singularity for non-integer positive index, x^{2n} ln x at positive
/// integers, an inverse-log law at index zero, and a constant shift of
/// 2|alpha| for negative index on top of the |alpha| expansion.
pub fn lyapunov_asymptotic(p: &ModelParams) -> Result<ExpansionResult, ExactError> {
    p.validate()?;
    expansion_for(p.alpha)
}

fn expansion_for(alpha: f64) -> Result<ExpansionResult, ExactError> {
    if alpha < 0.0 {
        let inner = expansion_for(-alpha)?;
        return Ok(ExpansionResult {
            analytic_coeffs: inner.analytic_coeffs,
            singular_coeff: 2.0 * alpha.abs(),
            singular_kind: SingularKind::ConstantShift,
            // the singular part of the |alpha| expansion is dropped here
            remainder_order: match inner.singular_kind {
                SingularKind::Power { exponent } => exponent.min(inner.remainder_order),
                SingularKind::PowerLog { n } => f64::from(2 * n).min(inner.remainder_order),
                _ => 2.0,
            },
        });
    }
    if alpha < INT_TOL {
        return Ok(ExpansionResult {
            analytic_coeffs: Vec::new(),
            singular_coeff: 1.0,
            singular_kind: SingularKind::InverseLog,
            remainder_order: 2.0,
        });
    }
    let n_near = alpha.round();
    if (alpha - n_near).abs() < INT_TOL && n_near >= 1.0 {
        let n = n_near as usize;
        let depth = (n - 1).min(12);
        let analytic = if depth == 0 {
            Vec::new()
        } else {
            expansion_coefficients_dd(n_near, depth)?
                .iter()
                .enumerate()
                .map(|(i, c)| (i as u32 + 1, c.to_f64()))
                .collect()
        };
        // log-term coefficient (-1)^n 2^{2-2n} / ((n-1)!)^2
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        let mut fact = 1.0;
        for k in 2..n {
            fact *= k as f64;
        }
        let coeff = sign * (2.0f64).powi(2 - 2 * n as i32) / (fact * fact);
        let remainder = if depth == n - 1 { 2.0 * n as f64 } else { 2.0 * (depth as f64 + 1.0) };
        return Ok(ExpansionResult {
            analytic_coeffs: analytic,
            singular_coeff: coeff,
            singular_kind: SingularKind::PowerLog { n: n as u32 },
            remainder_order: remainder,
        });
    }
    // non-integer positive index
    let analytic = expansion_coefficients_dd(alpha, J_CAP)?
        .iter()
        .enumerate()
        .map(|(i, c)| (i as u32 + 1, c.to_f64()))
        .collect();
    let coeff = 2.0 * gamma_real(1.0 - alpha) / gamma_real(alpha);
    let remainder = (2.0 * (J_CAP as f64 + 1.0)).min(2.0 * alpha + 2.0).min(4.0 * alpha);
    Ok(ExpansionResult {
        analytic_coeffs: analytic,
        singular_coeff: coeff,
        singular_kind: SingularKind::Power { exponent: 2.0 * alpha },
        remainder_order: remainder,
    })
}

/// Evaluates an assembled expansion at the Bessel argument x.
pub fn eval_expansion(r: &ExpansionResult, x: f64) -> f64 {
    let x2 = x * x;
    let mut f = 0.0;
    // Horner over the analytic part (contiguous orders 1..len)
    for &(_, c) in r.analytic_coeffs.iter().rev() {
        f = (f + c) * x2;
    }
    f + match r.singular_kind {
        SingularKind::Power { exponent } => {
            if x == 0.0 {
                0.0
            } else {
                r.singular_coeff * (0.5 * x).powf(exponent)
            }
        }
        SingularKind::PowerLog { n } => {
            if x == 0.0 {
                0.0
            } else {
                let xp = x.powi(2 * n as i32);
                if xp == 0.0 {
                    0.0
                } else {
                    r.singular_coeff * xp * x.ln()
                }
            }
        }
        SingularKind::InverseLog => {
            if x == 0.0 {
                0.0
            } else {
                r.singular_coeff / ((2.0 / x).ln() - EULER)
            }
        }
        SingularKind::ConstantShift => r.singular_coeff,
    }
}

/// Crude bound on the first omitted term of an assembled expansion.
fn expansion_tail_bound(r: &ExpansionResult, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let logs = x.ln().abs().max(1.0);
    2.0 * x.powf(r.remainder_order.min(600.0)) * logs
}

// ---- singular exponent fit ----

/// Least-squares read-off of the small-coupling singularity of L over an eps
/// grid. For index in (0,1) fits log-residual vs log-eps after subtracting
/// the analytic part and the geometric tail of the pure-singular family;
/// slope tends to 2 alpha and the prefactor to the exact singular amplitude.
/// At index zero returns (0, L ln(1/x)) and for negative index (0, L), both
/// read at the smallest eps.
pub fn singular_exponent_fit(
    sigma: f64,
    alpha: f64,
    eps_grid: &[f64],
) -> Result<(f64, f64), ExactError> {
    if !(sigma > 0.0) || !sigma.is_finite() || !alpha.is_finite() {
        return Err(ExactError::InvalidParams { what: "sigma must be positive, alpha finite" });
    }
    let mut eps: Vec<f64> = eps_grid.iter().copied().filter(|e| e.is_finite() && *e > 0.0).collect();
    eps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eps.dedup();
    if eps.len() < 4 || eps[eps.len() - 1] / eps[0] < 99.999 {
        return Err(ExactError::GridTooNarrow);
    }
    if alpha >= 1.0 - INT_TOL {
        return Err(ExactError::UnsupportedRegime { what: "index must be below 1 for a singular fit" });
    }
    let s2 = sigma * sigma;
    if alpha.abs() < INT_TOL {
        // inverse-log law: L ln(1/x) read at the smallest eps
        let p = ModelParams::new(sigma, 0.0, eps[0])?;
        let l = lyapunov(&p)?.value;
        return Ok((0.0, l * (1.0 / p.x()).ln()));
    }
    if alpha < 0.0 {
        let p = ModelParams::new(sigma, alpha, eps[0])?;
        return Ok((0.0, lyapunov(&p)?.value));
    }
    // power fit on the residual after removing the analytic part and the
    // geometric continuation of the singular family
    let c = expansion_coefficients_dd(alpha, J_CAP)?;
    let rho = gamma_real(1.0 - alpha) / gamma_real(alpha);
    let tau = gamma_real(1.0 - alpha) / gamma_real(1.0 + alpha);
    let mut ln_e = Vec::with_capacity(eps.len());
    let mut ln_r = Vec::with_capacity(eps.len());
    for &e in &eps {
        let p = ModelParams::new(sigma, alpha, e)?;
        let x = p.x();
        let f = 4.0 / s2 * lyapunov(&p)?.value;
        let x2 = x * x;
        let mut analytic = 0.0;
        for cj in c.iter().rev() {
            analytic = (analytic + cj.to_f64()) * x2;
        }
        let w2 = (0.5 * x).powf(2.0 * alpha);
        let geom = 2.0 * rho * tau * w2 * w2 / (1.0 - tau * w2);
        let resid = f - analytic - geom;
        if resid > 0.0 && resid.is_finite() {
            ln_e.push(e.ln());
            ln_r.push(resid.ln());
        }
    }
    if ln_e.len() < 4 {
        return Err(ExactError::GridTooNarrow);
    }
    let (slope, intercept) = linear_fit(&ln_e, &ln_r);
    Ok((slope, 0.25 * s2 * intercept.exp()))
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

// ---- CLT variance ----

/// CLT variance and the quadrature error that produced it. The flag records
/// that the inner integral ran in tail-complement form past the median.
#[derive(Clone, Copy, Debug)]
pub struct VarianceResult {
    pub v: f64,
    pub quad_err: f64,
    pub inner_cancellation_flag: bool,
}

/// Variance of the CLT for log||X||: the double integral of the squared
/// centered primitive against the inverted density weight. Both outer halves
/// are mapped onto (0, 1]; the inner integral for y > 1 is replaced by its
/// tail complement so the centered integrand never cancels catastrophically.
/// All exponents are kept nonpositive by shifting into the inner integrand.
pub fn variance(p: &ModelParams, policy: &PrecisionPolicy) -> Result<VarianceResult, ExactError> {
    p.validate()?;
    policy.validate()?;
    let a = p.alpha;
    let s2 = p.sigma * p.sigma;
    let eps = p.eps.abs();
    let x = p.x();
    let half_x = 0.5 * x;
    let ka = bessel_k(a, x, policy)?;
    let big_l = lyapunov(p)?.value;

    let inner_rel = (0.1 * policy.rel_tol).clamp(1e-13, 1e-9);
    let outer_rel = policy.rel_tol.clamp(1e-12, 1e-8);
    let worst_inner = Cell::new(0.0f64);
    let track = |q: crate::quad::Quadrature<f64>| -> f64 {
        let rel = q.err_est / q.value.abs().max(f64::MIN_POSITIVE);
        if q.value != 0.0 && rel > worst_inner.get() {
            worst_inner.set(rel.min(1.0));
        }
        q.value
    };

    // primitive of the centered integrand on (0, y], shifted by the outer
    // 1/y so the exponent stays <= 0
    let g_tilde = |y: f64| -> f64 {
        let inv_y = 1.0 / y;
        let f = |z: f64| -> f64 {
            if z <= 0.0 {
                return 0.0;
            }
            let w = eps * z - big_l;
            if w == 0.0 {
                return 0.0;
            }
            let t = (-1.0 - a) * z.ln() - half_x * (z + 1.0 / z - inv_y) + w.abs().ln();
            if t < -745.0 {
                0.0
            } else {
                w.signum() * t.exp()
            }
        };
        track(tanh_sinh_lenient(f, 0.0, y, inner_rel, 1e-290, 12))
    };
    // same primitive through the map y -> 1/y: tail complement past 1
    let h_tilde = |u: f64| -> f64 {
        let inv_u = 1.0 / u;
        let f = |w: f64| -> f64 {
            if w <= 0.0 {
                return 0.0;
            }
            let s = eps / w - big_l;
            if s == 0.0 {
                return 0.0;
            }
            let t = (a - 1.0) * w.ln() - half_x * (w + 1.0 / w - inv_u) + s.abs().ln();
            if t < -745.0 {
                0.0
            } else {
                s.signum() * t.exp()
            }
        };
        track(tanh_sinh_lenient(f, 0.0, u, inner_rel, 1e-290, 12))
    };

    let outer_a = |y: f64| -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let base = (a - 1.0) * y.ln() + half_x * (y - 1.0 / y);
        if base < -850.0 {
            return 0.0;
        }
        let g = g_tilde(y);
        if g == 0.0 {
            return 0.0;
        }
        let t = base + 2.0 * g.abs().ln();
        if t < -745.0 {
            0.0
        } else {
            t.exp()
        }
    };
    let outer_b = |u: f64| -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let base = (-a - 1.0) * u.ln() + half_x * (u - 1.0 / u);
        if base < -850.0 {
            return 0.0;
        }
        let h = h_tilde(u);
        if h == 0.0 {
            return 0.0;
        }
        let t = base + 2.0 * h.abs().ln();
        if t < -745.0 {
            0.0
        } else {
            t.exp()
        }
    };

    let ta = tanh_sinh_lenient(outer_a, 0.0, 1.0, outer_rel, 1e-290, policy.max_subdivisions.min(13));
    let tb = tanh_sinh_lenient(outer_b, 0.0, 1.0, outer_rel, 1e-290, policy.max_subdivisions.min(13));
    let scale = 2.0 / (s2 * ka.value);
    let v = scale * (ta.value + tb.value);
    let quad_err = scale * (ta.err_est + tb.err_est)
        + v.abs() * (2.0 * worst_inner.get() + ka.err_est / ka.value.abs().max(f64::MIN_POSITIVE));
    if !v.is_finite() || v <= 0.0 || !quad_err.is_finite() {
        return Err(ExactError::Quad(QuadError::ToleranceNotMet { achieved: f64::INFINITY, wanted: outer_rel }));
    }
    Ok(VarianceResult { v, quad_err, inner_cancellation_flag: true })
}

// ---- variance asymptotics ----

/// Small-coupling regime of the CLT variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarianceRegime {
    /// alpha < 0: variance tends to a constant
    Negative,
    /// alpha = 0
    Zero,
    /// 0 < alpha < 2: variance scales like x^{2 alpha}
    Power,
    /// alpha = 2: x^4 with a log enhancement
    LogQuartic,
    /// alpha > 2: clean x^4
    Quartic,
}

impl std::fmt::Display for VarianceRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            VarianceRegime::Negative => "alpha<0",
            VarianceRegime::Zero => "alpha=0",
            VarianceRegime::Power => "0<alpha<2",
            VarianceRegime::LogQuartic => "alpha=2",
            VarianceRegime::Quartic => "alpha>2",
        };
        f.write_str(s)
    }
}

/// The constant C(alpha) in the small-coupling law of the CLT variance,
/// together with its regime. On 0 < alpha < 2 the constant is
/// q1(alpha) 2^{1-alpha} / Gamma(alpha) with q1 evaluated by quadrature.
pub fn variance_asymptotic_constant(alpha: f64) -> Result<(f64, VarianceRegime), ExactError> {
    if !alpha.is_finite() {
        return Err(ExactError::InvalidParams { what: "alpha must be finite" });
    }
    if alpha.abs() <= 1e-9 {
        return Ok((7.0 / 6.0, VarianceRegime::Zero));
    }
    if alpha < 0.0 {
        return Ok((2.0, VarianceRegime::Negative));
    }
    if (alpha - 2.0).abs() <= 1e-9 {
        return Ok((0.25, VarianceRegime::LogQuartic));
    }
    if alpha < 2.0 {
        let q1 = q1_integral(alpha)?;
        let c = q1 * (2.0f64).powf(1.0 - alpha) / gamma_real(alpha);
        return Ok((c, VarianceRegime::Power));
    }
    let am1 = alpha - 1.0;
    Ok((1.0 / (8.0 * am1 * am1 * am1 * (alpha - 2.0)), VarianceRegime::Quartic))
}

/// q1(alpha) = int_0^infty y^{alpha-1} e^y Gamma(1-alpha, y)^2 dy for
/// alpha in (0,2), written with the scaled upper gamma so every factor stays
/// bounded. Panels (0,1), (1,40) and a mapped tail.
pub fn q1_integral(alpha: f64) -> Result<f64, ExactError> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(ExactError::InvalidParams { what: "q1 needs alpha in (0,2)" });
    }
    let s = 1.0 - alpha;
    let h = |y: f64| -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let sg = scaled_gamma_upper(s, y);
        let e = (alpha - 1.0) * y.ln() - y + 2.0 * sg.abs().ln();
        if e < -745.0 {
            0.0
        } else {
            e.exp()
        }
    };
    let q1 = tanh_sinh_lenient(&h, 0.0, 1.0, 1e-12, 1e-250, 12);
    let q2 = tanh_sinh_lenient(&h, 1.0, 40.0, 1e-12, 1e-250, 12);
    let q3 = tanh_sinh_lenient(|u: f64| if u <= 0.0 { 0.0 } else { h(40.0 / u) * 40.0 / (u * u) }, 0.0, 1.0, 1e-12, 1e-250, 12);
    let v = q1.value + q2.value + q3.value;
    let err = q1.err_est + q2.err_est + q3.err_est;
    if !v.is_finite() || v <= 0.0 || err > 1e-8 * v.abs() {
        return Err(ExactError::SpecFun(SpecFunError::ToleranceNotMet { achieved: err, wanted: 1e-8 * v.abs() }));
    }
    Ok(v)
}

/// e^y Gamma(s, y) for s in (-1, 1), y > 0, evaluated without forming the
/// huge exponential: asymptotic series for large y, the standard series or a
/// Lentz continued fraction otherwise, with the s <= 0 strip handled by the
/// all-positive Kummer form of the lower gamma.
pub(crate) fn scaled_gamma_upper(s: f64, y: f64) -> f64 {
    debug_assert!(s > -1.0 && s < 1.0 + 1e-12 && y > 0.0);
    if y >= 40.0 {
        // e^y Gamma(s,y) = y^{s-1} (1 + (s-1)/y + (s-1)(s-2)/y^2 + ...)
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..60 {
            term *= (s - k as f64) / y;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        return y.powf(s - 1.0) * sum;
    }
    if s > 1e-12 {
        if y < s + 1.0 {
            // complement of the lower series; no cancellation this side
            let mut term = 1.0 / s;
            let mut sum = term;
            let mut k = 1.0;
            while term.abs() > 1e-18 * sum.abs() && k < 500.0 {
                term *= y / (s + k);
                sum += term;
                k += 1.0;
            }
            return y.exp() * gamma_real(s) - y.powf(s) * sum;
        }
        return upper_gamma_cf_scaled(s, y);
    }
    if s.abs() <= 1e-12 {
        // exponential integral case
        if y <= 1.0 {
            let mut term = 1.0;
            let mut sum = 0.0;
            for k in 1..40 {
                term *= -y / k as f64;
                sum -= term / k as f64;
            }
            return y.exp() * (-EULER - y.ln() + sum);
        }
        return upper_gamma_cf_scaled(s, y);
    }
    // s in (-1, 0)
    if y <= 1.0 {
        let mut t = 1.0 / s;
        let mut sum = t;
        for k in 1..200 {
            t *= y / (s + k as f64);
            sum += t;
            if t.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        return y.exp() * gamma_real(s) - y.powf(s) * sum;
    }
    upper_gamma_cf_scaled(s, y)
}

/// Lentz continued fraction for y^s * CF = e^y Gamma(s, y), valid for y
/// around 1 and above, any s < y + 1.
fn upper_gamma_cf_scaled(s: f64, y: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = y + 1.0 - s;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    let mut i = 1.0;
    loop {
        let an = -i * (i - s);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 || i > 500.0 {
            break;
        }
        i += 1.0;
    }
    y.powf(s) * h
}

// ---- double-double ratio across all orders (test support) ----

/// f(alpha, x) in double-double for any real alpha, extending the base-strip
/// series by the exact recurrence f_{a+1} = x^2/(2a + f_a) and the negative-
/// order shift. Intended for residual studies at small x.
#[allow(dead_code)]
pub(crate) fn f_ratio_dd_ext(alpha: f64, x: f64) -> Dd {
    let xd = Dd::from_f64(x);
    if alpha < 0.0 {
        let shift = Dd::from_f64(alpha).mul_f64(-2.0);
        return f_ratio_dd_ext(-alpha, x).add(shift);
    }
    let mut a = alpha;
    let mut steps = 0u32;
    while a >= 0.9 {
        a -= 1.0;
        steps += 1;
    }
    let base = if a.abs() < 1e-12 {
        crate::specfun::f_ratio_zero_dd(xd)
    } else {
        crate::specfun::f_ratio_dd(&crate::specfun::DdRatioCtx::new(Dd::from_f64(a)), xd)
    };
    let x2 = xd.sqr();
    let ad = Dd::from_f64(alpha);
    let mut f = base;
    for j in 0..steps {
        let lower = ad.add_f64(-f64::from(steps - j));
        f = x2.div(lower.mul_f64(2.0).add(f));
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dd::{exp_dd, gamma_dd, ln_dd};
    use crate::quad::tanh_sinh;
    use crate::specfun::gamma_upper;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mp(sigma: f64, alpha: f64, eps: f64) -> ModelParams {
        ModelParams::new(sigma, alpha, eps).unwrap()
    }

    #[test]
    fn coefficient_fixtures() {
        let c3 = expansion_coefficients(3.0, 2).unwrap();
        assert_relative_eq!(c3[0], 0.25, max_relative = 1e-15);
        assert_relative_eq!(c3[1], -1.0 / 32.0, max_relative = 1e-15);
        let c5 = expansion_coefficients(5.0, 3).unwrap();
        assert_relative_eq!(c5[2], 1.0 / 6144.0, max_relative = 1e-15);
        let c6 = expansion_coefficients(6.0, 4).unwrap();
        assert_relative_eq!(c6[3], -19.0 / 7_680_000.0, max_relative = 1e-12);
    }

    #[test]
    fn coefficients_exact_rationals_at_three_tenths() {
        // computer-algebra ground truth for the first six orders
        let c = expansion_coefficients(0.3, 6).unwrap();
        let want = [
            -5.0 / 7.0,
            125.0 / 833.0,
            -6250.0 / 157_437.0,
            7_421_875.0 / 693_195_111.0,
            -660_156_250.0 / 228_061_191_519.0,
            32_697_558_593_750.0 / 41_767_354_675_981_179.0,
        ];
        for (got, want) in c.iter().zip(want.iter()) {
            assert_relative_eq!(got, want, max_relative = 1e-14);
        }
    }

    #[test]
    fn coefficients_match_closed_forms_generic_alpha() {
        let a = 10.0;
        let c = expansion_coefficients(a, 4).unwrap();
        let c1 = 1.0 / (2.0 * (a - 1.0));
        let c2 = -1.0 / (8.0 * (a - 2.0) * (a - 1.0) * (a - 1.0));
        let c3 = 1.0 / (16.0 * (a - 3.0) * (a - 2.0) * (a - 1.0).powi(3));
        let c4 = (11.0 - 5.0 * a)
            / (128.0 * (a - 4.0) * (a - 3.0) * (a - 2.0).powi(2) * (a - 1.0).powi(4));
        assert_relative_eq!(c[0], c1, max_relative = 1e-14);
        assert_relative_eq!(c[1], c2, max_relative = 1e-14);
        assert_relative_eq!(c[2], c3, max_relative = 1e-14);
        assert_relative_eq!(c[3], c4, max_relative = 1e-14);
    }

    #[test]
    fn coefficient_pole_rejection() {
        match expansion_coefficients(2.0 + 5e-9, 3) {
            Err(ExactError::PoleOfCoefficient { n: 2 }) => {}
            other => panic!("expected pole at 2, got {other:?}"),
        }
        assert!(expansion_coefficients(0.5, 13).is_err());
        assert!(expansion_coefficients(0.5, 12).is_ok());
    }

    #[test]
    fn lyapunov_half_integer_closed_form() {
        // at index 1/2 the ratio collapses and L = |eps|
        for &e in &[0.3, 1.0, 2.0] {
            let l = lyapunov(&mp(1.0, 0.5, e)).unwrap().value;
            assert_relative_eq!(l, e, max_relative = 1e-12);
        }
    }

    #[test]
    fn lyapunov_reference_spots() {
        // high-precision anchors across both evaluation branches
        let spots: &[(f64, f64, f64, f64, f64)] = &[
            (std::f64::consts::SQRT_2, 0.5, 0.5, 0.499999999999999957336, 1e-13),
            (std::f64::consts::SQRT_2, 0.8, 0.3, 0.219285075587095747289, 1e-13),
            (std::f64::consts::SQRT_2, -0.8, 0.3, 1.01928507558709590107, 1e-13),
            (1.0, 1.3, 0.125, 0.0506422307154434508081, 1e-13),
            (1.0, 2.7, 0.005, 2.94093050580074805406e-5, 1e-13),
            (1.0, 0.7, 0.4, 0.362174878845539053943, 1e-13),
            (1.0, 0.5, 0.3, 0.299999999999999988898, 1e-13),
            (1.0, 2.0, 1e-5, 1.99999998361190012225e-10, 1e-12),
            (1.0, -0.5, 1.0, 1.25, 1e-12),
            (1.0, 0.5, 1.0, 1.0, 1e-12),
            (1.0, 1.5, 1.0, 0.8, 1e-12),
        ];
        for &(s, a, e, want, tol) in spots {
            let l = lyapunov(&mp(s, a, e)).unwrap().value;
            assert_relative_eq!(l, want, max_relative = tol);
        }
        // logarithmic correction regime: bound-checked rather than exact
        let l = lyapunov(&mp(1.0, 1.0, 2.4e-9)).unwrap();
        assert_eq!(l.method, Method::Asymptotic);
        let truth = 4.28024085215179382608e-16;
        assert!((l.value - truth).abs() <= l.err_est);
        assert_relative_eq!(l.value, truth, max_relative = 0.01);
    }

    #[test]
    fn lyapunov_parity_and_negative_shift() {
        let lp = lyapunov(&mp(1.0, 0.5, 0.2)).unwrap().value;
        let lm = lyapunov(&mp(1.0, 0.5, -0.2)).unwrap().value;
        assert_eq!(lp, lm);
        // (4/s2)(L(-a) - L(a)) = 2a
        let lneg = lyapunov(&mp(std::f64::consts::SQRT_2, -0.8, 0.3)).unwrap().value;
        let lpos = lyapunov(&mp(std::f64::consts::SQRT_2, 0.8, 0.3)).unwrap().value;
        assert_relative_eq!(lneg - lpos, 0.8, max_relative = 1e-10);
    }

    #[test]
    fn lyapunov_asymptotic_branch_frozen() {
        let l = lyapunov(&mp(1.0, 0.0, 1e-10)).unwrap();
        assert_eq!(l.method, Method::Asymptotic);
        assert_relative_eq!(l.value, 0.0114913533095291729801, max_relative = 1e-13);
        // negative index: the dropped power term is covered by the error bound
        let l2 = lyapunov(&mp(1.0, -0.4, 1e-13)).unwrap();
        assert_eq!(l2.method, Method::Asymptotic);
        let truth = 0.200000000023267621366;
        assert!((l2.value - truth).abs() <= l2.err_est, "off by more than the bound");
        assert!(l2.err_est < 1e-7);
        assert_relative_eq!(l2.value, truth, max_relative = 1e-9);
    }

    #[test]
    fn asymptotic_matches_direct_near_switch() {
        // both sides of the x = 1e-8 switch must agree where both are valid
        for &alpha in &[0.7, 1.0, 2.3, -0.6, 0.0] {
            let eps_direct = 2.0e-8 / 4.0;
            let p = mp(1.0, alpha, eps_direct);
            let direct = lyapunov(&p).unwrap();
            assert_ne!(direct.method, Method::Asymptotic);
            let r = expansion_for(alpha).unwrap();
            let asym = 0.25 * eval_expansion(&r, p.x());
            assert_relative_eq!(direct.value, asym, max_relative = 1e-9);
        }
    }

    #[test]
    fn expansion_shapes_per_regime() {
        let r = lyapunov_asymptotic(&mp(1.0, 0.5, 0.1)).unwrap();
        assert_eq!(r.singular_kind, SingularKind::Power { exponent: 1.0 });
        assert_relative_eq!(r.singular_coeff, 2.0, max_relative = 1e-13);
        assert_eq!(r.analytic_coeffs.len(), 3);
        assert_relative_eq!(r.remainder_order, 2.0, max_relative = 1e-12);

        let r = lyapunov_asymptotic(&mp(1.0, 1.0, 0.1)).unwrap();
        assert_eq!(r.singular_kind, SingularKind::PowerLog { n: 1 });
        assert_relative_eq!(r.singular_coeff, -1.0, max_relative = 1e-15);
        assert!(r.analytic_coeffs.is_empty());
        assert_relative_eq!(r.remainder_order, 2.0);

        let r = lyapunov_asymptotic(&mp(1.0, 2.0, 0.1)).unwrap();
        assert_eq!(r.singular_kind, SingularKind::PowerLog { n: 2 });
        assert_relative_eq!(r.singular_coeff, 0.25, max_relative = 1e-15);
        assert_eq!(r.analytic_coeffs.len(), 1);
        assert_relative_eq!(r.analytic_coeffs[0].1, 0.5, max_relative = 1e-14);

        let r = lyapunov_asymptotic(&mp(1.0, 0.0, 0.1)).unwrap();
        assert_eq!(r.singular_kind, SingularKind::InverseLog);
        assert_relative_eq!(r.singular_coeff, 1.0);

        let r = lyapunov_asymptotic(&mp(1.0, -0.3, 0.1)).unwrap();
        assert_eq!(r.singular_kind, SingularKind::ConstantShift);
        assert_relative_eq!(r.singular_coeff, 0.6, max_relative = 1e-15);
        assert_relative_eq!(r.remainder_order, 0.6, max_relative = 1e-12);

        let r = lyapunov_asymptotic(&mp(1.0, -2.0, 0.1)).unwrap();
        assert_eq!(r.singular_kind, SingularKind::ConstantShift);
        assert_relative_eq!(r.singular_coeff, 4.0);
        assert_eq!(r.analytic_coeffs.len(), 1);
        assert_relative_eq!(r.analytic_coeffs[0].1, 0.5, max_relative = 1e-14);
        assert_relative_eq!(r.remainder_order, 4.0);
    }

    #[test]
    fn density_normalization_and_mode() {
        let p = mp(1.0, 0.7, 0.4);
        // cdf at a huge point must exhaust the mass
        assert_relative_eq!(invariant_cdf(&p, 1e280).unwrap(), 1.0, epsilon = 1e-9);
        // direct quadrature of the density over (0,1] matches the cdf
        let q = tanh_sinh(
            |y: f64| {
                if y <= 0.0 {
                    0.0
                } else {
                    invariant_density(&p, y).unwrap()
                }
            },
            0.0,
            1.0,
            1e-11,
            1e-250,
            12,
        )
        .unwrap();
        assert_relative_eq!(invariant_cdf(&p, 1.0).unwrap(), q.value, max_relative = 1e-9);

        // mode: compare against a golden-section argmax of the density
        let pm = mp(1.0, 0.0, 1.0);
        let star = density_mode(&pm).unwrap();
        assert_relative_eq!(star, (-1.0 + 17.0f64.sqrt()) / 4.0, max_relative = 1e-14);
        let (mut lo, mut hi) = (0.1, 3.0);
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        while hi - lo > 1e-9 {
            let m1 = hi - phi * (hi - lo);
            let m2 = lo + phi * (hi - lo);
            if invariant_density(&pm, m1).unwrap() < invariant_density(&pm, m2).unwrap() {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        assert_relative_eq!(star, 0.5 * (lo + hi), epsilon = 1e-6);
    }

    #[test]
    fn density_cdf_reference_spots() {
        let p = mp(1.0, 0.7, 0.4);
        assert_relative_eq!(
            invariant_density(&p, 0.3).unwrap(),
            0.996672900760015280131,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            invariant_density(&p, 1.0).unwrap(),
            0.47548509329313907823,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            invariant_density(&p, 2.5).unwrap(),
            0.0487468845027964427879,
            max_relative = 1e-12
        );
        assert_relative_eq!(mean_y(&p).unwrap(), 0.905437197113847577069, max_relative = 1e-12);

        // cdf anchors on both sides of y = 1, including the tail complement
        let pc = mp(1.0, 0.5, 1.0);
        assert_relative_eq!(
            invariant_cdf(&pc, 0.5).unwrap(),
            0.111575025257969864074,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            invariant_cdf(&pc, 1.0).unwrap(),
            0.594410641301968936671,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            invariant_cdf(&pc, 2.0).unwrap(),
            0.954275818207684733416,
            max_relative = 1e-9
        );
        let pd = mp(1.0, 0.7, 0.5);
        assert_relative_eq!(
            invariant_cdf(&pd, 1.0).unwrap(),
            0.675641218568195905832,
            max_relative = 1e-9
        );
    }

    #[test]
    fn density_point_errors() {
        let p = mp(1.0, 0.7, 0.4);
        assert!(matches!(invariant_density(&p, 0.0), Err(ExactError::NonPositivePoint { .. })));
        assert!(matches!(invariant_density(&p, -1.0), Err(ExactError::NonPositivePoint { .. })));
        let pneg = mp(1.0, 0.7, -0.4);
        assert!(matches!(invariant_density(&pneg, 1.0), Err(ExactError::InvalidParams { .. })));
    }

    #[test]
    fn ergodic_formulas_agree() {
        // eps E[Y] = eps E[1/Y] - alpha sigma^2/2, and both equal L
        let p = mp(std::f64::consts::SQRT_2, 0.5, 0.5);
        let l = lyapunov(&p).unwrap().value;
        let via_y = p.eps * mean_y(&p).unwrap();
        let via_inv = p.eps * mean_inv_y(&p).unwrap() - 0.5 * p.alpha * p.sigma * p.sigma;
        assert_relative_eq!(via_y, l, max_relative = 1e-12);
        assert_relative_eq!(via_inv, l, max_relative = 1e-11);
        // quadrature check of the first-moment form
        let q = tanh_sinh(
            |y: f64| if y <= 0.0 { 0.0 } else { y * invariant_density(&p, y).unwrap() },
            0.0,
            1.0,
            1e-11,
            1e-250,
            12,
        )
        .unwrap()
        .value
            + tanh_sinh(
                |u: f64| {
                    if u <= 0.0 {
                        0.0
                    } else {
                        invariant_density(&p, 1.0 / u).unwrap() / (u * u * u)
                    }
                },
                0.0,
                1.0,
                1e-11,
                1e-250,
                12,
            )
            .unwrap()
            .value;
        assert_relative_eq!(p.eps * q, l, max_relative = 1e-8);
    }

    #[test]
    fn singular_fit_power_window() {
        let grid: Vec<f64> = (0..9).map(|k| 1e-4 * 10f64.powf(k as f64 / 4.0)).collect();
        let (slope, pref) = singular_exponent_fit(1.0, 0.5, &grid).unwrap();
        assert!((slope - 1.0).abs() < 0.01, "slope {slope}");
        assert!((pref - 1.0).abs() < 0.01, "prefactor {pref}");

        let (slope, pref) = singular_exponent_fit(1.0, 0.3, &grid).unwrap();
        assert!((slope - 0.6).abs() < 0.006, "slope {slope}");
        let exact = 0.25 * 2.0 * gamma_real(0.7) / gamma_real(0.3) * (2.0f64).powf(0.6);
        assert!((pref / exact - 1.0).abs() < 0.02, "prefactor {pref} vs {exact}");

        let (slope, pref) = singular_exponent_fit(1.0, 0.8, &grid).unwrap();
        assert!((slope - 1.6).abs() < 0.016, "slope {slope}");
        let exact = 0.25 * 2.0 * gamma_real(0.2) / gamma_real(0.8) * (2.0f64).powf(1.6);
        assert!((pref / exact - 1.0).abs() < 0.05, "prefactor {pref} vs {exact}");
    }

    #[test]
    fn singular_fit_log_and_constant_modes() {
        // index zero: L ln(1/x) near sigma^2/4, read at x = 1e-6
        let grid = [2.5e-7, 2.5e-6, 2.5e-5, 2.5e-4, 2.5e-3];
        let (slope, pref) = singular_exponent_fit(1.0, 0.0, &grid).unwrap();
        assert_eq!(slope, 0.0);
        assert!((pref - 0.25).abs() < 0.05 * 0.25, "prefactor {pref}");
        // negative index: plain limit sigma^2 |alpha| / 2
        let grid = [1e-13, 1e-12, 1e-11, 1e-10];
        let (slope, pref) = singular_exponent_fit(1.0, -0.4, &grid).unwrap();
        assert_eq!(slope, 0.0);
        assert!((pref - 0.2).abs() < 0.005 * 0.2, "prefactor {pref}");
    }

    #[test]
    fn singular_fit_guards() {
        assert!(matches!(
            singular_exponent_fit(1.0, 0.5, &[1e-4, 2e-4, 4e-4, 8e-4]),
            Err(ExactError::GridTooNarrow)
        ));
        assert!(matches!(
            singular_exponent_fit(1.0, 0.5, &[1e-4, 1e-2]),
            Err(ExactError::GridTooNarrow)
        ));
        assert!(matches!(
            singular_exponent_fit(1.0, 1.2, &[1e-4, 1e-3, 1e-2, 1e-1]),
            Err(ExactError::UnsupportedRegime { .. })
        ));
    }

    #[test]
    fn variance_direct_form_agreement() {
        // the unsplit double integral, evaluated naively, must agree with the
        // cancellation-aware split at a moderate argument
        let p = mp(1.0, 0.5, 0.5);
        let r = variance(&p, &PrecisionPolicy::default()).unwrap();
        assert!(r.inner_cancellation_flag);
        assert!(r.v > 0.0);

        let x = p.x();
        let half_x = 0.5 * x;
        let a = p.alpha;
        let eps = p.eps;
        let ka = bessel_k(a, x, &PrecisionPolicy::default()).unwrap().value;
        let big_l = lyapunov(&p).unwrap().value;
        let inner = |y: f64| -> f64 {
            tanh_sinh_lenient(
                |z: f64| {
                    if z <= 0.0 {
                        return 0.0;
                    }
                    let e = -half_x * (z + 1.0 / z);
                    if e < -745.0 {
                        return 0.0;
                    }
                    (eps * z - big_l) * z.powf(-1.0 - a) * e.exp()
                },
                0.0,
                y,
                1e-11,
                1e-270,
                12,
            )
            .value
        };
        let outer = tanh_sinh_lenient(
            |y: f64| {
                if y <= 0.0 {
                    return 0.0;
                }
                let g = inner(y);
                if g == 0.0 {
                    return 0.0;
                }
                let t = (a - 1.0) * y.ln() + half_x * (y + 1.0 / y) + 2.0 * g.abs().ln();
                if t < -745.0 {
                    return 0.0;
                }
                t.exp()
            },
            0.0,
            60.0,
            1e-9,
            1e-200,
            12,
        );
        let v_direct = 2.0 / (p.sigma * p.sigma * ka) * outer.value;
        assert_relative_eq!(r.v, v_direct, max_relative = 1e-6);
    }

    #[test]
    fn variance_reference_spots() {
        let r1 = variance(&mp(1.0, 0.5, 0.5), &PrecisionPolicy::default()).unwrap();
        assert_relative_eq!(r1.v, 0.188132021295113042553, max_relative = 1e-9);
        assert!((r1.v - 0.188132021295113042553).abs() <= 10.0 * r1.quad_err.max(1e-15));
        let r2 = variance(&mp(1.0, 0.7, 0.4), &PrecisionPolicy::default()).unwrap();
        assert_relative_eq!(r2.v, 0.147544261134403365137, max_relative = 1e-9);
    }

    #[test]
    fn variance_constant_regime_small_coupling() {
        // negative index: v -> C(alpha) sigma^2 / 2 = 2 at alpha = -1, sigma^2 = 2
        let p = mp(std::f64::consts::SQRT_2, -1.0, 1e-3);
        let r = variance(&p, &PrecisionPolicy::default()).unwrap();
        assert!((r.v / 2.0 - 1.0).abs() < 0.03, "v = {}", r.v);
    }

    #[test]
    fn q1_frozen_values() {
        assert_relative_eq!(q1_integral(0.5).unwrap(), 2.45714277885553463909, max_relative = 1e-10);
        assert_relative_eq!(q1_integral(0.7).unwrap(), 1.923004145164248925, max_relative = 1e-10);
        assert_relative_eq!(
            q1_integral(1.0).unwrap(),
            std::f64::consts::PI * std::f64::consts::PI / 6.0,
            max_relative = 1e-10
        );
        assert_relative_eq!(q1_integral(1.5).unwrap(), 2.17552984591093734511, max_relative = 1e-10);
    }

    #[test]
    fn variance_constant_cases() {
        let (c, r) = variance_asymptotic_constant(-2.0).unwrap();
        assert_eq!((c, r), (2.0, VarianceRegime::Negative));
        let (c, r) = variance_asymptotic_constant(0.0).unwrap();
        assert_eq!(r, VarianceRegime::Zero);
        assert_relative_eq!(c, 7.0 / 6.0);
        let (c, r) = variance_asymptotic_constant(3.0).unwrap();
        assert_eq!(r, VarianceRegime::Quartic);
        assert_relative_eq!(c, 1.0 / 64.0);
        let (c, r) = variance_asymptotic_constant(2.0).unwrap();
        assert_eq!(r, VarianceRegime::LogQuartic);
        assert_relative_eq!(c, 0.25);
        let (c, r) = variance_asymptotic_constant(1.0).unwrap();
        assert_eq!(r, VarianceRegime::Power);
        assert_relative_eq!(c, std::f64::consts::PI * std::f64::consts::PI / 6.0, max_relative = 1e-9);
    }

    #[test]
    fn scaled_gamma_recurrence() {
        // e^y Gamma(s+1,y) = s e^y Gamma(s,y) + y^s ties the negative-index
        // branches to the positive-index ones
        for &s in &[-0.7, -0.3, -0.05] {
            for &y in &[0.3, 1.5, 5.0, 25.0, 80.0] {
                let lhs = scaled_gamma_upper(s, y);
                let rhs = (scaled_gamma_upper(s + 1.0, y) - y.powf(s)) / s;
                assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
            }
        }
        // positive indices against the unscaled routine
        for &s in &[0.2, 0.6] {
            for &y in &[0.3f64, 1.5, 5.0, 25.0, 60.0] {
                let direct = y.exp() * gamma_upper(s, y).unwrap();
                assert_relative_eq!(scaled_gamma_upper(s, y), direct, max_relative = 1e-11);
            }
        }
        // the exponential-integral arm joins continuously
        let a = scaled_gamma_upper(1e-13, 1.5);
        let b = scaled_gamma_upper(1e-9, 1.5);
        assert_relative_eq!(a, b, max_relative = 1e-6);
    }

    #[test]
    fn expansion_residual_orders() {
        // |f - assembled| must shrink like the advertised remainder order;
        // measured in double-double against the recurrence-extended ratio
        let gamma_dd_signed = |z: f64| -> Dd {
            if z > 0.0 {
                gamma_dd(Dd::from_f64(z))
            } else {
                // shift into the positive domain: gamma(z) = gamma(z+k) / prod_{j<k} (z+j)
                let k = (-z).floor() as i32 + 1;
                let zd = Dd::from_f64(z);
                let mut prod = zd;
                for j in 1..k {
                    prod = prod.mul(zd.add_f64(j as f64));
                }
                gamma_dd(zd.add_f64(k as f64)).div(prod)
            }
        };
        for &(alpha, want) in &[(0.3, 1.2), (1.4, 4.8), (2.7, 7.4)] {
            let r = expansion_for(alpha).unwrap();
            assert_relative_eq!(r.remainder_order, want, max_relative = 1e-12);
            let coeffs = expansion_coefficients_dd(alpha, J_CAP).unwrap();
            let scoeff = gamma_dd_signed(1.0 - alpha)
                .div(gamma_dd_signed(alpha))
                .mul_f64(2.0);
            let two_a = Dd::from_f64(alpha).mul_f64(2.0);
            let mut lnx = Vec::new();
            let mut lnr = Vec::new();
            for k in 0..7 {
                let x = 1e-4 * 10f64.powf(k as f64 / 3.0);
                let xd = Dd::from_f64(x);
                let f = f_ratio_dd_ext(alpha, x);
                let x2 = xd.sqr();
                let mut assembled = Dd::ZERO;
                for c in coeffs.iter().rev() {
                    assembled = assembled.add(*c).mul(x2);
                }
                let w = exp_dd(ln_dd(xd.mul_f64(0.5)).mul(two_a));
                assembled = assembled.add(scoeff.mul(w));
                let resid = f.sub(assembled).to_f64().abs();
                assert!(resid > 0.0, "residual vanished at alpha {alpha}, x {x}");
                lnx.push(x.ln());
                lnr.push(resid.ln());
            }
            let (slope, _) = linear_fit(&lnx, &lnr);
            assert!(
                (slope - want).abs() < 0.2,
                "alpha {alpha}: residual slope {slope}, want {want}"
            );
        }
    }

    #[test]
    fn dd_ratio_extension_consistency() {
        // the recurrence-extended dd ratio must match the f64 engine
        let policy = PrecisionPolicy::default();
        for &(alpha, x) in &[(1.4, 0.3), (2.7, 0.08), (-1.3, 0.5), (0.3, 1.2), (3.2, 0.9)] {
            let dd = f_ratio_dd_ext(alpha, x).to_f64();
            let f = f_ratio(alpha, x, &policy).unwrap().value;
            assert_relative_eq!(dd, f, max_relative = 1e-11);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_parity_exact(sigma in 0.5f64..2.0, alpha in -2.5f64..2.5, eps in 1e-3f64..2.0) {
            let lp = lyapunov(&mp(sigma, alpha, eps)).unwrap().value;
            let lm = lyapunov(&mp(sigma, alpha, -eps)).unwrap().value;
            prop_assert_eq!(lp, lm);
        }

        #[test]
        fn prop_negative_shift(sigma in 0.6f64..1.8, alpha in 0.05f64..2.8, eps in 1e-3f64..1.5) {
            let s2 = sigma * sigma;
            let lneg = lyapunov(&mp(sigma, -alpha, eps)).unwrap().value;
            let lpos = lyapunov(&mp(sigma, alpha, eps)).unwrap().value;
            let shift = 4.0 / s2 * (lneg - lpos);
            prop_assert!((shift - 2.0 * alpha).abs() < 1e-10 * (1.0 + 2.0 * alpha));
        }

        #[test]
        fn prop_q1_positive(alpha in 0.05f64..1.95) {
            prop_assert!(q1_integral(alpha).unwrap() > 0.0);
        }

        #[test]
        fn prop_density_nonnegative(alpha in -2.0f64..2.0, eps in 0.05f64..1.5, y in 1e-3f64..50.0) {
            let d = invariant_density(&mp(1.0, alpha, eps), y).unwrap();
            prop_assert!(d >= 0.0 && d.is_finite());
        }
    }
}
