//! Monte Carlo engines: exact disorder sampling, Euler integration of the
//! two-component linear system in three charts, and the discrete matrix
//! product with Lyapunov, invariant-measure, and CLT estimators.
//!
//! Replicas run as independent tasks with private RNG streams; results are
//! reduced by a deterministic ordered fold, so a run is reproducible for a
//! fixed (seed, config, law) regardless of worker count.

pub mod rng;

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::exact::{self, ExactError, ModelParams};
use crate::specfun::{gamma_real, gamma_upper, SpecFunError};

pub use rng::stream;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid disorder law: {what}")]
    InvalidLaw { what: &'static str },
    #[error("invalid simulation config: {what}")]
    InvalidConfig { what: &'static str },
    #[error("moment order {nu} not available for this law")]
    MomentUnavailable { nu: f64 },
    #[error("time step {dt:e} exceeds the stability heuristic {max:e}")]
    StepTooLarge { dt: f64, max: f64 },
    #[error("degenerate product: eps^2 delta^2 or eps^2 delta reaches 1")]
    Degenerate,
    #[error("budget too small: {what}")]
    BudgetTooSmall { what: &'static str },
    #[error("disorder family violates a continuum-limit hypothesis: {rate}")]
    HypothesisViolated { rate: &'static str },
    #[error("numerical failure: {what}")]
    Numerical { what: &'static str },
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
}

// ---- disorder laws ----

/// Base density for the shifted compactly supported family; centered, and
/// scaled so the variance equals sigma^2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseDensity {
    Uniform,
    Triangular,
}

impl BaseDensity {
    /// half-width of the support for unit variance times sigma
    fn half_width(self, sigma: f64) -> f64 {
        match self {
            BaseDensity::Uniform => 3f64.sqrt() * sigma,
            BaseDensity::Triangular => 6f64.sqrt() * sigma,
        }
    }

    fn sample_centered<R: Rng + ?Sized>(self, sigma: f64, rng: &mut R) -> f64 {
        let a = self.half_width(sigma);
        match self {
            BaseDensity::Uniform => a * (2.0 * rng.random::<f64>() - 1.0),
            BaseDensity::Triangular => {
                a * (rng.random::<f64>() + rng.random::<f64>() - 1.0)
            }
        }
    }

    /// P(T <= u) for the centered scaled variable
    fn cdf(self, sigma: f64, u: f64) -> f64 {
        let a = self.half_width(sigma);
        if u <= -a {
            return 0.0;
        }
        if u >= a {
            return 1.0;
        }
        match self {
            BaseDensity::Uniform => (u + a) / (2.0 * a),
            BaseDensity::Triangular => {
                if u <= 0.0 {
                    (u + a) * (u + a) / (2.0 * a * a)
                } else {
                    1.0 - (a - u) * (a - u) / (2.0 * a * a)
                }
            }
        }
    }

    /// E[1/(m + c T)], requires m > c a
    fn inv_shifted_mean(self, sigma: f64, m: f64, c: f64) -> f64 {
        let a = self.half_width(sigma);
        match self {
            BaseDensity::Uniform => ((m + c * a) / (m - c * a)).ln() / (2.0 * c * a),
            BaseDensity::Triangular => {
                let up = (a + m / c) * ((m + c * a) / m).ln();
                let dn = (a - m / c) * (m / (m - c * a)).ln();
                (up + dn) / (a * a * c)
            }
        }
    }
}

/// One-step disorder weight Z for the matrix product. Each variant samples
/// exactly and carries closed-form moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisorderLaw {
    /// exp(sigma sqrt(delta) G - alpha sigma^2 delta / 2) with G standard normal
    LogNormal { sigma: f64, alpha: f64 },
    /// lambda1 U^(1/n) with U uniform; the step size is encoded by
    /// n ~ delta^(-1/2), not by the sampler
    MwPower { n_param: f64, lambda1: f64 },
    /// m_delta + sqrt(delta) T, T from the base density,
    /// m_delta = 1 + sigma^2 (1 - alpha) delta / 2
    ShiftedCompact { base: BaseDensity, sigma: f64, alpha: f64 },
}

impl DisorderLaw {
    pub fn validate(&self) -> Result<(), SimError> {
        match *self {
            DisorderLaw::LogNormal { sigma, alpha } => {
                if !(sigma > 0.0) || !sigma.is_finite() || !alpha.is_finite() {
                    return Err(SimError::InvalidLaw { what: "log-normal needs finite alpha, sigma > 0" });
                }
            }
            DisorderLaw::MwPower { n_param, lambda1 } => {
                if !(n_param > 0.0) || !n_param.is_finite() || !(lambda1 > 0.0) || !lambda1.is_finite() {
                    return Err(SimError::InvalidLaw { what: "power family needs n > 0, lambda1 > 0" });
                }
            }
            DisorderLaw::ShiftedCompact { sigma, alpha, .. } => {
                if !(sigma > 0.0) || !sigma.is_finite() || !alpha.is_finite() {
                    return Err(SimError::InvalidLaw { what: "shifted family needs finite alpha, sigma > 0" });
                }
            }
        }
        Ok(())
    }

    /// Validation that depends on the step size: the shifted family must keep
    /// its whole support positive.
    pub fn validate_at(&self, delta: f64) -> Result<(), SimError> {
        self.validate()?;
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(SimError::InvalidConfig { what: "delta must be positive and finite" });
        }
        if let DisorderLaw::ShiftedCompact { base, sigma, alpha } = *self {
            let m = shifted_mean(sigma, alpha, delta);
            if m <= delta.sqrt() * base.half_width(sigma) {
                return Err(SimError::InvalidLaw { what: "shifted family support reaches zero at this delta" });
            }
        }
        Ok(())
    }

    /// One exact draw of Z at step size delta.
    pub fn sample<R: Rng + ?Sized>(&self, delta: f64, rng: &mut R) -> f64 {
        match *self {
            DisorderLaw::LogNormal { sigma, alpha } => {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                (sigma * delta.sqrt() * g - 0.5 * alpha * sigma * sigma * delta).exp()
            }
            DisorderLaw::MwPower { n_param, lambda1 } => {
                let u: f64 = rng.sample(rand_distr::Open01);
                lambda1 * u.powf(1.0 / n_param)
            }
            DisorderLaw::ShiftedCompact { base, sigma, alpha } => {
                shifted_mean(sigma, alpha, delta) + delta.sqrt() * base.sample_centered(sigma, rng)
            }
        }
    }

    /// E[Z^nu] in closed form. The shifted family only exposes nu in
    /// {1, 2, -1}; the power family needs nu > -n.
    pub fn power_moment(&self, delta: f64, nu: f64) -> Result<f64, SimError> {
        self.validate_at(delta)?;
        match *self {
            DisorderLaw::LogNormal { sigma, alpha } => {
                Ok((0.5 * sigma * sigma * delta * nu * (nu - alpha)).exp())
            }
            DisorderLaw::MwPower { n_param, lambda1 } => {
                if nu <= -n_param {
                    return Err(SimError::MomentUnavailable { nu });
                }
                Ok(lambda1.powf(nu) / (1.0 + nu / n_param))
            }
            DisorderLaw::ShiftedCompact { base, sigma, alpha } => {
                let m = shifted_mean(sigma, alpha, delta);
                if nu == 1.0 {
                    Ok(m)
                } else if nu == 2.0 {
                    Ok(m * m + sigma * sigma * delta)
                } else if nu == -1.0 {
                    Ok(base.inv_shifted_mean(sigma, m, delta.sqrt()))
                } else {
                    Err(SimError::MomentUnavailable { nu })
                }
            }
        }
    }

    pub fn mean(&self, delta: f64) -> Result<f64, SimError> {
        self.power_moment(delta, 1.0)
    }

    pub fn second_moment(&self, delta: f64) -> Result<f64, SimError> {
        self.power_moment(delta, 2.0)
    }

    pub fn inv_moment(&self, delta: f64) -> Result<f64, SimError> {
        self.power_moment(delta, -1.0)
    }

    /// P(|Z - 1| > c), exactly.
    pub fn tail_mass(&self, delta: f64, c: f64) -> Result<f64, SimError> {
        self.validate_at(delta)?;
        if !(c > 0.0) {
            return Err(SimError::InvalidConfig { what: "tail threshold must be positive" });
        }
        match *self {
            DisorderLaw::LogNormal { sigma, alpha } => {
                let sd = sigma * delta.sqrt();
                let shift = 0.5 * alpha * sigma * sigma * delta;
                let upper = normal_sf(((1.0 + c).ln() + shift) / sd);
                let lower = if c < 1.0 {
                    1.0 - normal_sf(((1.0 - c).ln() + shift) / sd)
                } else {
                    0.0
                };
                Ok(upper + lower)
            }
            DisorderLaw::MwPower { n_param, lambda1 } => {
                // Z = lambda1 U^(1/n): P(Z < t) = (t / lambda1)^n for t in (0, lambda1)
                let cdf = |t: f64| -> f64 {
                    if t <= 0.0 {
                        0.0
                    } else if t >= lambda1 {
                        1.0
                    } else {
                        (t / lambda1).powf(n_param)
                    }
                };
                Ok(cdf(1.0 - c) + (1.0 - cdf(1.0 + c)))
            }
            DisorderLaw::ShiftedCompact { base, sigma, alpha } => {
                let m = shifted_mean(sigma, alpha, delta);
                let sd = delta.sqrt();
                let lower = base.cdf(sigma, (1.0 - c - m) / sd);
                let upper = 1.0 - base.cdf(sigma, (1.0 + c - m) / sd);
                Ok(lower + upper)
            }
        }
    }

    /// (sigma, alpha) of the continuum limit this family converges to.
    pub fn continuum_params(&self) -> Result<(f64, f64), SimError> {
        self.validate()?;
        Ok(match *self {
            DisorderLaw::LogNormal { sigma, alpha } => (sigma, alpha),
            DisorderLaw::MwPower { n_param, lambda1 } => (1.0, mw_implied_alpha(n_param, lambda1)),
            DisorderLaw::ShiftedCompact { sigma, alpha, .. } => (sigma, alpha),
        })
    }

    /// The same family at a different step size; used by the hypothesis scan.
    fn at_delta(&self, delta: f64) -> DisorderLaw {
        match *self {
            DisorderLaw::MwPower { n_param, lambda1 } => {
                let alpha = mw_implied_alpha(n_param, lambda1);
                let n = delta.powf(-0.5);
                DisorderLaw::MwPower { n_param: n, lambda1: mw_lambda1(alpha, n) }
            }
            other => other,
        }
    }
}

fn shifted_mean(sigma: f64, alpha: f64, delta: f64) -> f64 {
    1.0 + 0.5 * sigma * sigma * (1.0 - alpha) * delta
}

/// lambda1 normalized so that E[Z^alpha] = 1 at width parameter n.
pub fn mw_lambda1(alpha: f64, n: f64) -> f64 {
    if alpha.abs() < 1e-10 {
        (1.0 / n).exp()
    } else {
        (1.0 + alpha / n).powf(1.0 / alpha)
    }
}

/// Index alpha solving E[Z^alpha] = 1 for the power family, i.e.
/// alpha log(lambda1) = log(1 + alpha/n). Unique besides the trivial root.
pub fn mw_implied_alpha(n: f64, lambda1: f64) -> f64 {
    let l1 = lambda1.ln();
    // g(a) = log1p(a/n)/a, decreasing; root of l1 - g
    let g = |a: f64| -> f64 {
        if a.abs() < 1e-6 * n {
            (1.0 - 0.5 * a / n + a * a / (3.0 * n * n)) / n
        } else {
            (a / n).ln_1p() / a
        }
    };
    let h0 = l1 - g(0.0);
    if h0.abs() < 1e-15 {
        return 0.0;
    }
    let (mut lo, mut hi) = if h0 < 0.0 {
        // root is positive
        let mut hi = 1e-3;
        while l1 - g(hi) < 0.0 {
            hi *= 2.0;
            if hi > 1e6 {
                break;
            }
        }
        (0.0, hi)
    } else {
        (-n * (1.0 - 1e-12), 0.0)
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if l1 - g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= 1e-16 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

// ---- configuration and summaries ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// product step size; echoed here by the CLI, the product operations
    /// take it explicitly
    pub delta: f64,
    /// SDE time step
    pub dt: f64,
    pub n_steps: u64,
    pub burn_in: u64,
    pub replicas: u32,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(SimError::InvalidConfig { what: "delta must be positive and finite" });
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SimError::InvalidConfig { what: "dt must be positive and finite" });
        }
        if self.n_steps == 0 {
            return Err(SimError::InvalidConfig { what: "n_steps must be positive" });
        }
        if self.burn_in >= self.n_steps {
            return Err(SimError::InvalidConfig { what: "burn_in must be smaller than n_steps" });
        }
        if self.replicas == 0 {
            return Err(SimError::InvalidConfig { what: "need at least one replica" });
        }
        Ok(())
    }

    /// 10% of the step budget with a floor of 10^4, capped below n_steps.
    pub fn default_burn_in(n_steps: u64) -> u64 {
        (n_steps / 10).max(10_000).min(n_steps.saturating_sub(1))
    }
}

/// Result of one estimator run. extras holds named diagnostics; scalars are
/// single-element vectors.
#[derive(Debug, Clone)]
pub struct PathSummary {
    pub estimate: f64,
    pub std_error: f64,
    pub ess: f64,
    pub extras: BTreeMap<String, Vec<f64>>,
}

/// Total batch count for std errors.
const BATCH_TARGET: u64 = 32;

/// Contiguous batch means with a compensated running sum, plus a Welford
/// accumulator over raw values for the effective sample size.
struct BatchAcc {
    batch_len: u64,
    sums: Vec<f64>,
    in_batch: u64,
    sum: f64,
    comp: f64,
    count: u64,
    mean: f64,
    m2: f64,
}

impl BatchAcc {
    fn new(batch_len: u64, batches: usize) -> BatchAcc {
        BatchAcc {
            batch_len,
            sums: Vec::with_capacity(batches),
            in_batch: 0,
            sum: 0.0,
            comp: 0.0,
            count: 0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    #[inline]
    fn push(&mut self, v: f64) {
        // Kahan step
        let y = v - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
        self.in_batch += 1;
        if self.in_batch == self.batch_len {
            self.sums.push(self.sum / self.batch_len as f64);
            self.in_batch = 0;
            self.sum = 0.0;
            self.comp = 0.0;
        }
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
    }
}

struct ReplicaStats {
    batch_means: Vec<f64>,
    count: u64,
    mean: f64,
    m2: f64,
}

impl BatchAcc {
    fn finish(self) -> ReplicaStats {
        ReplicaStats { batch_means: self.sums, count: self.count, mean: self.mean, m2: self.m2 }
    }
}

/// Deterministic ordered fold of per-replica statistics.
fn summarize(stats: &[ReplicaStats], batch_len: u64) -> (f64, f64, f64) {
    let mut means: Vec<f64> = Vec::new();
    let mut count = 0u64;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for s in stats {
        means.extend_from_slice(&s.batch_means);
        if s.count > 0 {
            let n = count + s.count;
            let d = s.mean - mean;
            mean += d * s.count as f64 / n as f64;
            m2 += s.m2 + d * d * (count as f64) * (s.count as f64) / n as f64;
            count = n;
        }
    }
    let b = means.len();
    if b == 0 || count < 2 {
        return (mean, f64::NAN, count as f64);
    }
    let est = means.iter().sum::<f64>() / b as f64;
    if b < 2 {
        return (est, f64::NAN, count as f64);
    }
    let var_b = means.iter().map(|m| (m - est) * (m - est)).sum::<f64>() / (b - 1) as f64;
    let se = (var_b / b as f64).sqrt();
    let var_raw = m2 / (count - 1) as f64;
    let ess = if var_b > 0.0 && var_raw > 0.0 {
        (count as f64 * var_raw / (batch_len as f64 * var_b)).clamp(1.0, count as f64)
    } else {
        count as f64
    };
    (est, se, ess)
}

/// Post-burn-in window chopped into equal batches: (batch_len, per-replica
/// batch count). The last few steps that do not fill a batch are not counted.
fn batch_layout(n_steps: u64, burn_in: u64, replicas: u32) -> Result<(u64, u64), SimError> {
    let per_replica = (BATCH_TARGET + u64::from(replicas) - 1) / u64::from(replicas);
    let post = n_steps - burn_in;
    let batch_len = post / per_replica;
    if batch_len == 0 {
        return Err(SimError::InvalidConfig { what: "post-burn-in window shorter than the batch count" });
    }
    Ok((batch_len, per_replica))
}

// ---- the discrete matrix product ----

fn check_product_regime(eps: f64, delta: f64) -> Result<(), SimError> {
    if !eps.is_finite() {
        return Err(SimError::InvalidConfig { what: "eps must be finite" });
    }
    let ed = (eps * delta).abs();
    if ed * ed >= 1.0 || eps * eps * delta >= 1.0 {
        return Err(SimError::Degenerate);
    }
    Ok(())
}

struct ProductReplica {
    stats: ReplicaStats,
    y_min: f64,
    y_final: f64,
}

/// One replica of the ratio recursion Y <- Z (Y + eps delta) / (1 + eps delta Y)
/// from Y(0) = 1, feeding log(1 + eps delta Y) into the accumulator and
/// optionally visiting each post-burn-in Y.
fn run_product_replica<F: FnMut(f64)>(
    law: &DisorderLaw,
    eps: f64,
    delta: f64,
    n_used: u64,
    burn_in: u64,
    batch_len: u64,
    batches: u64,
    rng: &mut impl Rng,
    mut visit: F,
) -> Result<ProductReplica, SimError> {
    let ed = eps * delta;
    let mut y = 1.0f64;
    let mut y_min = y;
    let mut acc = BatchAcc::new(batch_len, batches as usize);
    for i in 0..n_used {
        if i >= burn_in {
            let arg = ed * y;
            if arg <= -1.0 {
                return Err(SimError::Numerical { what: "log argument left (0, inf) in the product" });
            }
            acc.push(arg.ln_1p());
            visit(y);
        }
        let z = law.sample(delta, rng);
        y = z * (y + ed) / (1.0 + ed * y);
        if !y.is_finite() {
            return Err(SimError::Numerical { what: "ratio iterate diverged" });
        }
        if y < y_min {
            y_min = y;
        }
    }
    Ok(ProductReplica { stats: acc.finish(), y_min, y_final: y })
}

/// Per-step log growth of the matrix product: the mean of
/// log(1 + eps delta Y) over the post-burn-in window, replicas averaged.
/// Divide by delta to compare against the continuum exponent.
pub fn product_lyapunov(
    law: &DisorderLaw,
    eps: f64,
    delta: f64,
    config: &SimConfig,
) -> Result<PathSummary, SimError> {
    config.validate()?;
    law.validate_at(delta)?;
    check_product_regime(eps, delta)?;
    let (batch_len, batches) = batch_layout(config.n_steps, config.burn_in, config.replicas)?;
    let n_used = config.burn_in + batch_len * batches;

    let runs: Result<Vec<ProductReplica>, SimError> = (0..config.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(config.seed, u64::from(r), "product");
            run_product_replica(law, eps, delta, n_used, config.burn_in, batch_len, batches, &mut rng, |_| {})
        })
        .collect();
    let runs = runs?;

    let stats: Vec<ReplicaStats> = runs.iter().map(|r| ReplicaStats {
        batch_means: r.stats.batch_means.clone(),
        count: r.stats.count,
        mean: r.stats.mean,
        m2: r.stats.m2,
    }).collect();
    let (estimate, std_error, ess) = summarize(&stats, batch_len);

    let mut extras = BTreeMap::new();
    extras.insert("y_min".into(), vec![runs.iter().map(|r| r.y_min).fold(f64::INFINITY, f64::min)]);
    extras.insert("y_final".into(), runs.iter().map(|r| r.y_final).collect());
    Ok(PathSummary { estimate, std_error, ess, extras })
}

/// Empirical invariant measure of the ratio chain, with the moment bounds it
/// must satisfy and a grid comparison against the continuum density.
#[derive(Debug, Clone)]
pub struct MeasureReport {
    /// counted post-burn-in steps across replicas
    pub samples: u64,
    pub second_moment: f64,
    /// (x^+)^2 from the concave fixed-point bound with q = sqrt(E[Z^2])
    pub second_moment_bound: f64,
    pub inv_mean: f64,
    /// x^- from the same fixed point with q = E[1/Z]
    pub inv_mean_bound: f64,
    /// mean log(1 + eps delta Y); same statistic as product_lyapunov
    pub lyap: f64,
    pub lyap_se: f64,
    /// sup over the grid of |empirical cdf - continuum cdf|
    pub ks: f64,
    /// equal-probability cell edges of the continuum law
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

fn fixed_point_bound(q: f64, eps_delta: f64) -> f64 {
    let r = (q - 1.0) / eps_delta;
    0.5 * (r + (r * r + 4.0 * q).sqrt())
}

/// Cells of equal continuum probability for the stationary slope density.
/// The unnormalized density is integrated on a log grid wide enough that the
/// dropped tails are below double precision.
fn equal_prob_edges(p: &ModelParams, cells: usize) -> Result<Vec<f64>, SimError> {
    if cells < 2 {
        return Err(SimError::InvalidConfig { what: "need at least two histogram cells" });
    }
    let x = p.x();
    let y_lo = (x / 3000.0).min(1e-4);
    let y_hi = (1600.0 / x).max(10.0);
    let (la, lb) = (y_lo.ln(), y_hi.ln());
    let n = 8192usize;
    let h = (lb - la) / n as f64;
    // integrand of int p(y) dy in s = log y
    let w = |s: f64| -> f64 {
        let y = s.exp();
        let e = -p.alpha * s - 0.5 * x * (y + 1.0 / y);
        if e < -745.0 {
            0.0
        } else {
            e.exp()
        }
    };
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0f64);
    let mut prev = w(la);
    let mut total = 0.0f64;
    for i in 1..=n {
        let cur = w(la + h * i as f64);
        total += 0.5 * h * (prev + cur);
        cum.push(total);
        prev = cur;
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(SimError::Numerical { what: "density grid integration failed" });
    }
    let mut edges = Vec::with_capacity(cells - 1);
    let mut j = 0usize;
    for k in 1..cells {
        let target = total * k as f64 / cells as f64;
        while j + 1 < cum.len() && cum[j + 1] < target {
            j += 1;
        }
        let frac = if cum[j + 1] > cum[j] { (target - cum[j]) / (cum[j + 1] - cum[j]) } else { 0.5 };
        edges.push((la + h * (j as f64 + frac)).exp());
    }
    Ok(edges)
}

pub fn product_invariant_measure(
    law: &DisorderLaw,
    eps: f64,
    delta: f64,
    config: &SimConfig,
) -> Result<MeasureReport, SimError> {
    config.validate()?;
    law.validate_at(delta)?;
    check_product_regime(eps, delta)?;
    if !(eps > 0.0) {
        return Err(SimError::InvalidConfig { what: "measure comparison needs eps > 0" });
    }
    let (batch_len, batches) = batch_layout(config.n_steps, config.burn_in, config.replicas)?;
    let n_used = config.burn_in + batch_len * batches;

    let (sig_c, alpha_c) = law.continuum_params()?;
    let cont = ModelParams::new(sig_c, alpha_c, eps)?;
    let cells = 1000usize;
    let edges = equal_prob_edges(&cont, cells)?;

    struct MeasureReplica {
        stats: ReplicaStats,
        counts: Vec<u64>,
        sum_y2: f64,
        sum_inv: f64,
        n: u64,
    }

    let runs: Result<Vec<MeasureReplica>, SimError> = (0..config.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(config.seed, u64::from(r), "product");
            let mut counts = vec![0u64; cells];
            let mut sum_y2 = 0.0f64;
            let mut c_y2 = 0.0f64;
            let mut sum_inv = 0.0f64;
            let mut c_inv = 0.0f64;
            let mut n = 0u64;
            let edges_ref = &edges;
            let out = run_product_replica(
                law, eps, delta, n_used, config.burn_in, batch_len, batches, &mut rng,
                |y| {
                    let idx = edges_ref.partition_point(|e| *e < y);
                    counts[idx] += 1;
                    let v = y * y - c_y2;
                    let t = sum_y2 + v;
                    c_y2 = (t - sum_y2) - v;
                    sum_y2 = t;
                    let v = 1.0 / y - c_inv;
                    let t = sum_inv + v;
                    c_inv = (t - sum_inv) - v;
                    sum_inv = t;
                    n += 1;
                },
            )?;
            Ok(MeasureReplica { stats: out.stats, counts, sum_y2, sum_inv, n })
        })
        .collect();
    let runs = runs?;

    let stats: Vec<ReplicaStats> = runs.iter().map(|r| ReplicaStats {
        batch_means: r.stats.batch_means.clone(),
        count: r.stats.count,
        mean: r.stats.mean,
        m2: r.stats.m2,
    }).collect();
    let (lyap, lyap_se, _) = summarize(&stats, batch_len);

    let mut counts = vec![0u64; cells];
    let mut sum_y2 = 0.0;
    let mut sum_inv = 0.0;
    let mut samples = 0u64;
    for r in &runs {
        for (c, rc) in counts.iter_mut().zip(&r.counts) {
            *c += rc;
        }
        sum_y2 += r.sum_y2;
        sum_inv += r.sum_inv;
        samples += r.n;
    }
    let mut ks = 0.0f64;
    let mut cum = 0u64;
    for (k, c) in counts.iter().enumerate().take(cells - 1) {
        cum += c;
        let emp = cum as f64 / samples as f64;
        let thr = (k + 1) as f64 / cells as f64;
        ks = ks.max((emp - thr).abs());
    }

    let q_plus = law.second_moment(delta)?.sqrt();
    let q_minus = law.inv_moment(delta)?;
    let xp = fixed_point_bound(q_plus, eps * delta);
    let xm = fixed_point_bound(q_minus, eps * delta);

    Ok(MeasureReport {
        samples,
        second_moment: sum_y2 / samples as f64,
        second_moment_bound: xp * xp,
        inv_mean: sum_inv / samples as f64,
        inv_mean_bound: xm,
        lyap,
        lyap_se,
        ks,
        edges,
        counts,
    })
}

// ---- the diffusion ----

/// Integration chart for the two-component linear system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffusionChart {
    /// s = log(x2/x1); positivity-preserving, the default
    LogS,
    /// y = x2/x1 directly
    RatioY,
    /// raw coordinates with periodic renormalization; audit runs only
    Xy,
}

fn max_stable_dt(p: &ModelParams) -> f64 {
    1e-3 * 1.0f64.min(1.0 / p.eps.abs()).min(1.0 / (p.sigma * p.sigma))
}

/// Euler-Maruyama run of the requested chart. The estimate is the ergodic
/// Lyapunov functional: the time average of eps Y (slope charts) or of the
/// log-norm growth rate (raw chart) over the post-burn-in window.
///
/// extras (slope charts): "log_x1_final" carries the reconstruction exponent
/// eps int Y dt per replica, "y_final" the terminal slope. The default chart
/// with eps > 0 also reports an equal-probability histogram of Y thinned to
/// roughly unit time spacing with its chi-square statistic. The raw chart
/// reports per-replica sign-agreement times "tau" (capped at the horizon,
/// with "tau_censored" counting the capped ones) and "sign_flips_after_tau",
/// which stays zero when trapping holds.
pub fn simulate_diffusion(
    p: &ModelParams,
    config: &SimConfig,
    chart: DiffusionChart,
) -> Result<PathSummary, SimError> {
    p.validate()?;
    config.validate()?;
    let max_dt = max_stable_dt(p);
    if config.dt > max_dt * (1.0 + 1e-12) {
        return Err(SimError::StepTooLarge { dt: config.dt, max: max_dt });
    }
    let (batch_len, batches) = batch_layout(config.n_steps, config.burn_in, config.replicas)?;
    let n_used = config.burn_in + batch_len * batches;
    let dt = config.dt;
    let sqdt = dt.sqrt();
    let eps = p.eps;
    let sig = p.sigma;
    // Ito drift of s: eps (e^{-s} - e^s) + delta - sigma^2/2
    let s_drift0 = p.delta() - 0.5 * sig * sig;
    let y_drift_lin = p.delta();

    let hist_edges = if chart == DiffusionChart::LogS && eps > 0.0 {
        Some(equal_prob_edges(p, 50)?)
    } else {
        None
    };
    let thin = (1.0 / dt).round().max(1.0) as u64;

    struct DiffReplica {
        stats: ReplicaStats,
        y_final: f64,
        log_x1: f64,
        counts: Option<Vec<u64>>,
        kept: u64,
        tau: Option<f64>,
        flips_after: u64,
        nonpositive: u64,
    }

    let runs: Result<Vec<DiffReplica>, SimError> = (0..config.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(config.seed, u64::from(r), "diffusion");
            let mut acc = BatchAcc::new(batch_len, batches as usize);
            let mut counts = hist_edges.as_ref().map(|e| vec![0u64; e.len() + 1]);
            let mut kept = 0u64;
            let mut log_x1 = 0.0f64;
            match chart {
                DiffusionChart::LogS => {
                    let mut s = 0.0f64;
                    for i in 0..n_used {
                        let es = s.exp();
                        if i >= config.burn_in {
                            acc.push(eps * es);
                            log_x1 += eps * es * dt;
                            if let (Some(c), Some(e)) = (counts.as_mut(), hist_edges.as_ref()) {
                                if (i - config.burn_in) % thin == 0 {
                                    c[e.partition_point(|t| *t < es)] += 1;
                                    kept += 1;
                                }
                            }
                        }
                        let g: f64 = rng.sample(rand_distr::StandardNormal);
                        s += (eps * (1.0 / es - es) + s_drift0) * dt + sig * sqdt * g;
                        if !s.is_finite() {
                            return Err(SimError::Numerical { what: "log-slope diverged" });
                        }
                    }
                    Ok(DiffReplica {
                        stats: acc.finish(),
                        y_final: s.exp(),
                        log_x1,
                        counts,
                        kept,
                        tau: None,
                        flips_after: 0,
                        nonpositive: 0,
                    })
                }
                DiffusionChart::RatioY => {
                    let mut y = 1.0f64;
                    let mut nonpositive = 0u64;
                    for i in 0..n_used {
                        if i >= config.burn_in {
                            acc.push(eps * y);
                            log_x1 += eps * y * dt;
                        }
                        let g: f64 = rng.sample(rand_distr::StandardNormal);
                        y += (eps * (1.0 - y * y) + y_drift_lin * y) * dt + sig * y * sqdt * g;
                        if !y.is_finite() {
                            return Err(SimError::Numerical { what: "slope iterate diverged" });
                        }
                        if y <= 0.0 {
                            nonpositive += 1;
                        }
                    }
                    Ok(DiffReplica {
                        stats: acc.finish(),
                        y_final: y,
                        log_x1,
                        counts: None,
                        kept: 0,
                        tau: None,
                        flips_after: 0,
                        nonpositive,
                    })
                }
                DiffusionChart::Xy => {
                    // mixed-sign start exercises the trapping time
                    let mut x1 = -1.0f64;
                    let mut x2 = 1.0f64;
                    let mut lognorm = 0.0f64;
                    let mut prev = x1.hypot(x2).ln();
                    let mut tau = None;
                    let mut flips_after = 0u64;
                    for i in 0..n_used {
                        let g: f64 = rng.sample(rand_distr::StandardNormal);
                        let d1 = eps * x2 * dt;
                        let d2 = (eps * x1 + y_drift_lin * x2) * dt + sig * x2 * sqdt * g;
                        x1 += d1;
                        x2 += d2;
                        if !(x1.is_finite() && x2.is_finite()) {
                            return Err(SimError::Numerical { what: "raw coordinates diverged" });
                        }
                        let same = x1 != 0.0 && x1.signum() == x2.signum();
                        match tau {
                            None if same => tau = Some((i + 1) as f64 * dt),
                            Some(_) if !same => flips_after += 1,
                            _ => {}
                        }
                        if (i + 1) % 64 == 0 {
                            let m = x1.abs().max(x2.abs());
                            if m > 0.0 {
                                lognorm += m.ln();
                                x1 /= m;
                                x2 /= m;
                            }
                        }
                        let cur = lognorm + x1.hypot(x2).ln();
                        if i >= config.burn_in {
                            acc.push((cur - prev) / dt);
                        }
                        prev = cur;
                    }
                    Ok(DiffReplica {
                        stats: acc.finish(),
                        y_final: if x1 != 0.0 { x2 / x1 } else { f64::INFINITY },
                        log_x1: lognorm,
                        counts: None,
                        kept: 0,
                        tau,
                        flips_after,
                        nonpositive: 0,
                    })
                }
            }
        })
        .collect();
    let runs = runs?;

    let stats: Vec<ReplicaStats> = runs.iter().map(|r| ReplicaStats {
        batch_means: r.stats.batch_means.clone(),
        count: r.stats.count,
        mean: r.stats.mean,
        m2: r.stats.m2,
    }).collect();
    let (estimate, std_error, ess) = summarize(&stats, batch_len);

    let mut extras: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    extras.insert("y_final".into(), runs.iter().map(|r| r.y_final).collect());
    extras.insert("log_x1_final".into(), runs.iter().map(|r| r.log_x1).collect());
    if chart == DiffusionChart::Xy {
        let horizon = n_used as f64 * dt;
        let taus: Vec<f64> = runs.iter().map(|r| r.tau.unwrap_or(horizon)).collect();
        let censored = runs.iter().filter(|r| r.tau.is_none()).count();
        let mean_tau = taus.iter().sum::<f64>() / taus.len() as f64;
        extras.insert("tau".into(), taus);
        extras.insert("tau_mean".into(), vec![mean_tau]);
        extras.insert("tau_censored".into(), vec![censored as f64]);
        extras.insert(
            "sign_flips_after_tau".into(),
            vec![runs.iter().map(|r| r.flips_after).sum::<u64>() as f64],
        );
    }
    if chart == DiffusionChart::RatioY {
        extras.insert(
            "y_nonpositive_steps".into(),
            vec![runs.iter().map(|r| r.nonpositive).sum::<u64>() as f64],
        );
    }
    if let Some(edges) = hist_edges {
        let cells = edges.len() + 1;
        let mut counts = vec![0u64; cells];
        let mut kept = 0u64;
        for r in &runs {
            if let Some(c) = &r.counts {
                for (a, b) in counts.iter_mut().zip(c) {
                    *a += b;
                }
            }
            kept += r.kept;
        }
        if kept >= 5 * cells as u64 {
            let expected = kept as f64 / cells as f64;
            let stat: f64 = counts.iter().map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            }).sum();
            let dof = (cells - 1) as f64;
            let pval = gamma_upper(0.5 * dof, 0.5 * stat)? / gamma_real(0.5 * dof);
            extras.insert("chi2_stat".into(), vec![stat]);
            extras.insert("chi2_p".into(), vec![pval]);
            extras.insert("chi2_kept".into(), vec![kept as f64]);
        }
        extras.insert("y_hist_counts".into(), counts.iter().map(|&c| c as f64).collect());
        extras.insert("y_hist_edges".into(), edges);
    }
    Ok(PathSummary { estimate, std_error, ess, extras })
}

// ---- CLT variance across replicas ----

/// Empirical variance of (log X_1(t) - t L)/sqrt(t) across replicas, with
/// the replica statistics, their skewness and excess kurtosis in extras.
/// Requires at least 10^3 replicas.
pub fn clt_variance_estimate(p: &ModelParams, config: &SimConfig) -> Result<PathSummary, SimError> {
    p.validate()?;
    config.validate()?;
    if config.replicas < 1000 {
        return Err(SimError::BudgetTooSmall { what: "clt variance needs >= 1000 replicas" });
    }
    let max_dt = max_stable_dt(p);
    if config.dt > max_dt * (1.0 + 1e-12) {
        return Err(SimError::StepTooLarge { dt: config.dt, max: max_dt });
    }
    let dt = config.dt;
    let sqdt = dt.sqrt();
    let eps = p.eps.abs();
    let sig = p.sigma;
    let s_drift0 = p.delta() - 0.5 * sig * sig;
    let t_final = config.n_steps as f64 * dt;
    let big_l = exact::lyapunov(p)?.value;

    let runs: Result<Vec<f64>, SimError> = (0..config.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(config.seed, u64::from(r), "clt");
            let mut s = 0.0f64;
            let mut integral = 0.0f64;
            for _ in 0..config.n_steps {
                let es = s.exp();
                integral += es;
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                s += (eps * (1.0 / es - es) + s_drift0) * dt + sig * sqdt * g;
                if !s.is_finite() {
                    return Err(SimError::Numerical { what: "log-slope diverged" });
                }
            }
            Ok((eps * integral * dt - t_final * big_l) / t_final.sqrt())
        })
        .collect();
    let w = runs?;

    let nr = w.len() as f64;
    let mean = w.iter().sum::<f64>() / nr;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for v in &w {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    let variance = m2 / (nr - 1.0);
    m2 /= nr;
    m3 /= nr;
    m4 /= nr;
    let skew = m3 / m2.powf(1.5);
    let exkurt = m4 / (m2 * m2) - 3.0;

    // std error of the variance by grouping replicas into 32 batches
    let b = 32usize.min(w.len() / 2);
    let glen = w.len() / b;
    let mut gvars = Vec::with_capacity(b);
    for k in 0..b {
        let chunk = &w[k * glen..(k + 1) * glen];
        let gm = chunk.iter().sum::<f64>() / glen as f64;
        gvars.push(chunk.iter().map(|v| (v - gm) * (v - gm)).sum::<f64>() / (glen - 1) as f64);
    }
    let gmean = gvars.iter().sum::<f64>() / b as f64;
    let gsd = (gvars.iter().map(|v| (v - gmean) * (v - gmean)).sum::<f64>() / (b - 1) as f64).sqrt();
    let std_error = gsd / (b as f64).sqrt();

    let mut extras: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    extras.insert("mean_stat".into(), vec![mean]);
    extras.insert("skewness".into(), vec![skew]);
    extras.insert("excess_kurtosis".into(), vec![exkurt]);
    extras.insert("t_final".into(), vec![t_final]);
    extras.insert("stats".into(), w);
    Ok(PathSummary { estimate: variance, std_error, ess: nr, extras })
}

// ---- continuum-limit hypothesis scan ----

#[derive(Debug, Clone, Copy)]
pub struct HypothesisRow {
    pub delta: f64,
    /// (E[Z] - 1)/delta
    pub drift_rate: f64,
    /// E[(Z-1)^2]/delta
    pub var_rate: f64,
    /// P(|Z-1| > c)/delta
    pub tail_rate: f64,
    /// (E[1/Z] - 1)/delta
    pub inv_rate: f64,
}

#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub rows: Vec<HypothesisRow>,
    /// sigma^2 (1 - alpha)/2
    pub drift_limit: f64,
    /// sigma^2
    pub var_limit: f64,
    /// fitted log-log slopes of the gaps to the limits; None when a gap sits
    /// at rounding level over the whole grid
    pub drift_slope: Option<f64>,
    pub var_slope: Option<f64>,
    pub tail_slope: Option<f64>,
    pub inv_rate_max: f64,
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(_, y)| **y > 1e-280).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Closed-form rates of the continuum-limit hypotheses along a decreasing
/// delta grid: the drift and variance rates with their limits, the tail rate
/// which must vanish, and the inverse-moment rate which must stay bounded.
pub fn check_hypotheses(
    law: &DisorderLaw,
    delta_grid: &[f64],
    c: f64,
) -> Result<HypothesisReport, SimError> {
    law.validate()?;
    if delta_grid.len() < 2 {
        return Err(SimError::InvalidConfig { what: "need at least two grid deltas" });
    }
    for w in delta_grid.windows(2) {
        if !(w[1] < w[0]) {
            return Err(SimError::InvalidConfig { what: "delta grid must decrease" });
        }
    }
    if !(delta_grid[0] < 1.0) || !(delta_grid[delta_grid.len() - 1] > 0.0) {
        return Err(SimError::InvalidConfig { what: "delta grid must lie in (0, 1)" });
    }
    let (sig_c, alpha_c) = law.continuum_params()?;
    let drift_limit = 0.5 * sig_c * sig_c * (1.0 - alpha_c);
    let var_limit = sig_c * sig_c;

    let mut rows = Vec::with_capacity(delta_grid.len());
    for &d in delta_grid {
        let fam = law.at_delta(d);
        let m1 = fam.mean(d)?;
        let m2 = fam.second_moment(d)?;
        let mi = fam.inv_moment(d)?;
        rows.push(HypothesisRow {
            delta: d,
            drift_rate: (m1 - 1.0) / d,
            var_rate: (m2 - 2.0 * m1 + 1.0) / d,
            tail_rate: fam.tail_mass(d, c)? / d,
            inv_rate: (mi - 1.0) / d,
        });
    }

    let deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    let dgap: Vec<f64> = rows.iter().map(|r| (r.drift_rate - drift_limit).abs()).collect();
    let vgap: Vec<f64> = rows.iter().map(|r| (r.var_rate - var_limit).abs()).collect();
    let tails: Vec<f64> = rows.iter().map(|r| r.tail_rate).collect();
    let inv_rate_max = rows.iter().map(|r| r.inv_rate.abs()).fold(0.0, f64::max);

    let last = rows.len() - 1;
    let tol_d = 1e-9 * drift_limit.abs().max(1.0);
    if dgap[last] > dgap[0] * (1.0 + 1e-9) + tol_d {
        return Err(SimError::HypothesisViolated { rate: "drift rate moves away from its limit" });
    }
    let tol_v = 1e-9 * var_limit.max(1.0);
    if vgap[last] > vgap[0] * (1.0 + 1e-9) + tol_v {
        return Err(SimError::HypothesisViolated { rate: "variance rate moves away from its limit" });
    }
    if tails[last] > tails[0] * (1.0 + 1e-9) + 1e-280 {
        return Err(SimError::HypothesisViolated { rate: "tail rate fails to vanish" });
    }
    if inv_rate_max > 100.0 * (1.0 + var_limit) {
        return Err(SimError::HypothesisViolated { rate: "inverse-moment rate unbounded" });
    }

    Ok(HypothesisReport {
        drift_slope: loglog_slope(&deltas, &dgap),
        var_slope: loglog_slope(&deltas, &vgap),
        tail_slope: loglog_slope(&deltas, &tails),
        rows,
        drift_limit,
        var_limit,
        inv_rate_max,
    })
}
