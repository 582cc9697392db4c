//! Modified Bessel function of the second kind at real and complex order,
//! the auxiliary series behind its order derivative, and the ratio
//! f(alpha, x) = x K_{alpha-1}(x) / K_alpha(x) that the rest of the library
//! leans on.
//!
//! Branches:
//! * connection-formula power series for x <= 2 when the order keeps a
//!   distance >= 0.05 from the integers,
//! * logarithmic series at (snapped-to) integer order for x <= 2,
//! * cosh-kernel integral everywhere else.
//!
//! The ratio has its own series that cancels the common sine prefactor, so it
//! stays finite through order values where K alone would overflow, and a
//! double-double variant used by the high-precision Taylor extraction.

use super::gamma::{digamma, rgamma_complex, rgamma_real};
use super::{Method, PrecisionPolicy, SpecFunError, SpecialEval};
use crate::dd::{exp_dd, ln_dd, Dd};
use crate::quad::{tanh_sinh, QuadError};
use num_complex::Complex64;

const LN2: f64 = std::f64::consts::LN_2;
const PI: f64 = std::f64::consts::PI;

fn map_quad_err(e: QuadError, wanted: f64) -> SpecFunError {
    match e {
        QuadError::ToleranceNotMet { achieved, .. } => SpecFunError::ToleranceNotMet { achieved, wanted },
        QuadError::BadInterval { .. } => SpecFunError::OutOfRange { what: "degenerate quadrature interval" },
    }
}

/// Entire series Itilde_mu(x) = sum_k (x^2/4)^k / (k! Gamma(mu+k+1)),
/// i.e. I_mu(x) with the (x/2)^mu prefactor stripped.
fn itilde_real(mu: f64, x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut sum = 0.0;
    let mut kfac = 1.0;
    let mut qk = 1.0;
    let mut rg = 0.0;
    let mut peak = 0.0f64;
    for k in 0..120 {
        let kf = k as f64;
        if k > 0 {
            kfac *= kf;
            qk *= q;
        }
        let arg = mu + kf + 1.0;
        rg = if k == 0 || arg < 2.0 { rgamma_real(arg) } else { rg / (arg - 1.0) };
        let term = qk / kfac * rg;
        sum += term;
        peak = peak.max(term.abs());
        if k > 3 && term.abs() < 1e-18 * peak.max(sum.abs()) {
            break;
        }
    }
    sum
}

fn itilde_complex(mu: Complex64, x: f64) -> Complex64 {
    let q = 0.25 * x * x;
    let mut sum = Complex64::new(0.0, 0.0);
    let mut kfac = 1.0;
    let mut qk = 1.0;
    let mut rg = Complex64::new(0.0, 0.0);
    let mut peak = 0.0f64;
    for k in 0..120 {
        let kf = k as f64;
        if k > 0 {
            kfac *= kf;
            qk *= q;
        }
        let arg = mu + (kf + 1.0);
        rg = if k == 0 || arg.re < 2.0 { rgamma_complex(arg) } else { rg / (arg - 1.0) };
        let term = rg * (qk / kfac);
        sum += term;
        peak = peak.max(term.norm());
        if k > 3 && term.norm() < 1e-18 * peak.max(sum.norm()) {
            break;
        }
    }
    sum
}

fn itilde_dd(gamma_mu_plus_1: Dd, mu: Dd, q: Dd) -> Dd {
    // q = x^2/4; fixed-count loop, terms die like q^k/k!^2
    let mut rg = gamma_mu_plus_1.recip();
    let mut sum = rg;
    let mut qk = Dd::ONE;
    let mut kfac = Dd::ONE;
    for k in 1..60 {
        let kf = k as f64;
        qk = qk.mul(q);
        kfac = kfac.mul_f64(kf);
        rg = rg.div(mu.add_f64(kf));
        let term = qk.div(kfac).mul(rg);
        sum = sum.add(term);
        if term.abs().to_f64() < 1e-35 * sum.abs().to_f64().max(1e-300) {
            break;
        }
    }
    sum
}

fn integer_dist(a: f64) -> f64 {
    (a - a.round()).abs()
}

fn complex_integer_dist(a: Complex64) -> f64 {
    (a.re - a.re.round()).hypot(a.im)
}

// ---- real order K ----

fn k_series_real(a: f64, x: f64) -> SpecialEval<f64> {
    // K_a = pi/(2 sin pi a) [ (x/2)^{-a} It_{-a} - (x/2)^{a} It_{a} ]
    let lnb = (0.5 * x).ln();
    let e = a * lnb;
    let t1 = (-e).exp() * itilde_real(-a, x);
    let t2 = e.exp() * itilde_real(a, x);
    let s = (PI * a).sin();
    let value = PI / (2.0 * s) * (t1 - t2);
    let cancel = (t1.abs() + t2.abs()) / (t1 - t2).abs().max(f64::MIN_POSITIVE);
    SpecialEval { value, err_est: 4e-16 * (1.0 + cancel) * value.abs(), method: Method::Series }
}

fn k_log_series(n: u32, x: f64) -> SpecialEval<f64> {
    // integer-order series with the log term; psi values enter through
    // harmonic numbers
    let euler = 0.577215664901532860607;
    let q = 0.25 * x * x;
    let half_pow = (0.5 * x).powi(n as i32);
    let lnb = (0.5 * x).ln();

    // finite sum: (1/2) (x/2)^{-n} sum_{k=0}^{n-1} ((n-k-1)!/k!) (-q)^k
    let mut finite = 0.0;
    if n > 0 {
        let mut c = 1.0; // (n-1)!/0!
        for j in 1..n {
            c *= j as f64;
        }
        let mut qk = 1.0;
        for k in 0..n {
            let kf = k as f64;
            if k > 0 {
                // (n-k-1)!/k! from (n-k)!/(k-1)!: divide by (n-k) and k
                c /= (n as f64 - kf) * kf;
                qk *= -q;
            }
            finite += c * qk;
        }
        finite *= 0.5 / half_pow;
    }

    // I_n(x) and the psi series
    let itn = itilde_real(n as f64, x);
    let i_n = half_pow * itn;
    let mut h_k = 0.0; // H_0
    let mut h_nk = 0.0; // H_n
    for j in 1..=n {
        h_nk += 1.0 / j as f64;
    }
    let mut kfac = 1.0;
    let mut nkfac = 1.0; // (n+k)! / n! at k=0 ... build absolute: n!
    for j in 1..=n {
        nkfac *= j as f64;
    }
    let mut qk = 1.0;
    let mut psum = 0.0;
    for k in 0..80 {
        let kf = k as f64;
        if k > 0 {
            kfac *= kf;
            nkfac *= n as f64 + kf;
            qk *= q;
            h_k += 1.0 / kf;
            h_nk += 1.0 / (n as f64 + kf);
        }
        let term = (h_k + h_nk - 2.0 * euler) * qk / (kfac * nkfac);
        psum += term;
        if k > 3 && term.abs() < 1e-18 * psum.abs().max(1e-300) {
            break;
        }
    }
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    let value = finite - sign * lnb * i_n + sign * 0.5 * half_pow * psum;
    SpecialEval { value, err_est: 8e-16 * value.abs(), method: Method::LogSeries }
}

fn k_integral_real(a: f64, x: f64, policy: &PrecisionPolicy) -> Result<SpecialEval<f64>, SpecFunError> {
    if x > 750.0 {
        return Ok(SpecialEval { value: 0.0, err_est: 1e-300, method: Method::Integral });
    }
    let t_max = ((760.0 + 40.0 * a) / x).acosh();
    let f = move |t: f64| -> f64 {
        let m = -x * t.cosh() + a * t - LN2;
        if m < -745.0 {
            return 0.0;
        }
        m.exp() * (1.0 + (-2.0 * a * t).exp())
    };
    let q = tanh_sinh(f, 0.0, t_max, 0.5 * policy.rel_tol, policy.abs_tol, policy.max_subdivisions)
        .map_err(|e| map_quad_err(e, policy.rel_tol))?;
    Ok(SpecialEval { value: q.value, err_est: q.err_est + 2e-16 * q.value.abs(), method: Method::Integral })
}

/// Modified Bessel K at real order. Symmetric in the order sign.
pub fn bessel_k(order: f64, x: f64, policy: &PrecisionPolicy) -> Result<SpecialEval<f64>, SpecFunError> {
    policy.validate()?;
    if !(x > 0.0) {
        return Err(SpecFunError::NonPositiveArgument { what: "bessel_k x", value: x });
    }
    if !order.is_finite() {
        return Err(SpecFunError::InvalidOrder { what: "bessel_k order must be finite" });
    }
    let a = order.abs();
    let dist = integer_dist(a);
    if x <= 2.0 && dist >= 0.05 {
        Ok(k_series_real(a, x))
    } else if x <= 2.0 && dist < 1e-8 {
        // snap to the integer; the err_est carries the snap distance
        let mut ev = k_log_series(a.round() as u32, x);
        ev.err_est += dist * ((0.5 * x).ln().abs() + 2.0) * ev.value.abs();
        Ok(ev)
    } else {
        k_integral_real(a, x, policy)
    }
}

// ---- complex order K ----

fn k_series_imag_order(nu: f64, x: f64) -> SpecialEval<Complex64> {
    // purely imaginary order: K_{i nu}(x) is real,
    //   K = -pi Im[(x/2)^{i nu} Itilde_{i nu}(x)] / sinh(pi nu)
    let lnb = (0.5 * x).ln();
    let w = Complex64::new(0.0, nu * lnb).exp();
    let big_w = w * itilde_complex(Complex64::new(0.0, nu), x);
    let value = -PI * big_w.im / (PI * nu).sinh();
    SpecialEval {
        value: Complex64::new(value, 0.0),
        err_est: 4e-16 * (1.0 + PI * big_w.norm() / (PI * nu).sinh().abs()),
        method: Method::Series,
    }
}

fn k_series_complex(a: Complex64, x: f64) -> SpecialEval<Complex64> {
    let lnb = (0.5 * x).ln();
    let w = (a * lnb).exp();
    let t1 = itilde_complex(-a, x) / w;
    let t2 = itilde_complex(a, x) * w;
    let s = (PI * a).sin();
    let value = PI / (2.0 * s) * (t1 - t2);
    let cancel = (t1.norm() + t2.norm()) / (t1 - t2).norm().max(f64::MIN_POSITIVE);
    SpecialEval { value, err_est: 4e-16 * (1.0 + cancel) * value.norm(), method: Method::Series }
}

fn k_integral_complex(a: Complex64, x: f64, policy: &PrecisionPolicy) -> Result<SpecialEval<Complex64>, SpecFunError> {
    if x > 750.0 {
        return Ok(SpecialEval { value: Complex64::new(0.0, 0.0), err_est: 1e-300, method: Method::Integral });
    }
    if a.re == 0.0 {
        // real integrand e^{-x cosh t} cos(nu t)
        let nu = a.im;
        let t_max = (760.0 / x).acosh();
        let f = move |t: f64| -> f64 {
            let m = -x * t.cosh();
            if m < -745.0 {
                return 0.0;
            }
            m.exp() * (nu * t).cos()
        };
        let q = tanh_sinh(f, 0.0, t_max, 0.5 * policy.rel_tol, policy.abs_tol, policy.max_subdivisions)
            .map_err(|e| map_quad_err(e, policy.rel_tol))?;
        return Ok(SpecialEval {
            value: Complex64::new(q.value, 0.0),
            err_est: q.err_est + 2e-16 * q.value.abs(),
            method: Method::Integral,
        });
    }
    let t_max = ((760.0 + 40.0 * a.re.abs()) / x).acosh();
    let f = move |t: f64| -> Complex64 {
        let m = a * t - (x * t.cosh() + LN2);
        if m.re < -745.0 {
            return Complex64::new(0.0, 0.0);
        }
        m.exp() * (1.0 + (-2.0 * a * t).exp())
    };
    let q = tanh_sinh(f, 0.0, t_max, 0.5 * policy.rel_tol, policy.abs_tol, policy.max_subdivisions)
        .map_err(|e| map_quad_err(e, policy.rel_tol))?;
    Ok(SpecialEval { value: q.value, err_est: q.err_est + 2e-16 * q.value.norm(), method: Method::Integral })
}

/// Modified Bessel K at complex order. Requires a non-integer order on the
/// series branch; near-integer complex orders fall through to the integral.
pub fn bessel_k_complex(order: Complex64, x: f64, policy: &PrecisionPolicy) -> Result<SpecialEval<Complex64>, SpecFunError> {
    policy.validate()?;
    if !(x > 0.0) {
        return Err(SpecFunError::NonPositiveArgument { what: "bessel_k_complex x", value: x });
    }
    let a = if order.re < 0.0 || (order.re == 0.0 && order.im < 0.0) { -order } else { order };
    if a.im == 0.0 {
        let ev = bessel_k(a.re, x, policy)?;
        return Ok(SpecialEval { value: Complex64::new(ev.value, 0.0), err_est: ev.err_est, method: ev.method });
    }
    let dist = complex_integer_dist(a);
    if x <= 2.0 && dist >= 0.05 {
        if a.re == 0.0 {
            Ok(k_series_imag_order(a.im, x))
        } else {
            Ok(k_series_complex(a, x))
        }
    } else {
        k_integral_complex(a, x, policy)
    }
}

// ---- order-derivative machinery ----

/// S(mu) = sum_k (x^2/4)^k/k! (x/2)^mu rGamma(mu+k+1) [ln(x/2) - psi(mu+k+1)],
/// which is d/dmu I_mu(x).
fn s_series(mu: Complex64, x: f64) -> Complex64 {
    let lnb = (0.5 * x).ln();
    let q = 0.25 * x * x;
    let w = (mu * lnb).exp();
    let mut sum = Complex64::new(0.0, 0.0);
    let mut kfac = 1.0;
    let mut qk = 1.0;
    let mut rg = Complex64::new(0.0, 0.0);
    let mut psi = Complex64::new(0.0, 0.0);
    for k in 0..80 {
        let kf = k as f64;
        if k > 0 {
            kfac *= kf;
            qk *= q;
        }
        let arg = mu + (kf + 1.0);
        if k == 0 || arg.re < 2.5 {
            rg = rgamma_complex(arg);
            psi = match digamma(arg) {
                Ok(ev) => ev.value,
                Err(_) => Complex64::new(f64::NAN, 0.0),
            };
        } else {
            rg /= arg - 1.0;
            psi += 1.0 / (arg - 1.0);
        }
        let term = rg * (lnb - psi) * (qk / kfac);
        sum += term;
        if k > 3 && term.norm() < 1e-18 * sum.norm().max(1e-300) {
            break;
        }
    }
    w * sum
}

fn ktilde_series(a: Complex64, x: f64) -> SpecialEval<Complex64> {
    if a.re == 0.0 && a.im != 0.0 {
        // purely imaginary order: Ktilde = i pi Re S(i nu) / sinh(pi nu)
        let nu = a.im;
        let s = s_series(a, x);
        let value = Complex64::new(0.0, PI * s.re / (PI * nu).sinh());
        return SpecialEval { value, err_est: 4e-15 * (1.0 + value.norm()), method: Method::Series };
    }
    let s_sum = s_series(a, x) + s_series(-a, x);
    let value = -PI / (2.0 * (PI * a).sin()) * s_sum;
    SpecialEval { value, err_est: 4e-15 * (1.0 + value.norm()), method: Method::Series }
}

fn pi_cot_pi(a: Complex64) -> Complex64 {
    let pa = PI * a;
    PI * pa.cos() / pa.sin()
}

fn dk_differenced(order: Complex64, x: f64, policy: &PrecisionPolicy) -> Result<SpecialEval<Complex64>, SpecFunError> {
    // forced-integral 4-point central stencil with one Richardson level, so
    // all stencil values share a branch
    let h = policy.order_step;
    let eval = |al: Complex64| -> Result<Complex64, SpecFunError> {
        Ok(k_integral_complex(
            if al.re < 0.0 || (al.re == 0.0 && al.im < 0.0) { -al } else { al },
            x,
            policy,
        )?
        .value)
    };
    // careful: K is even in the order, so evaluate with signed orders mapped
    // through the symmetry before differencing
    let d_at = |hh: f64| -> Result<Complex64, SpecFunError> {
        let km2 = eval(order - 2.0 * hh)?;
        let km1 = eval(order - hh)?;
        let kp1 = eval(order + hh)?;
        let kp2 = eval(order + 2.0 * hh)?;
        Ok((km2 - 8.0 * km1 + 8.0 * kp1 - kp2) / (12.0 * hh))
    };
    let d1 = d_at(h)?;
    let d2 = d_at(0.5 * h)?;
    let value = (16.0 * d2 - d1) / 15.0;
    let err = (d2 - d1).norm() / 15.0 + 4e-15 / h;
    Ok(SpecialEval { value, err_est: err, method: Method::Differenced })
}

/// The auxiliary order-derivative series: the function Kt with
/// dK/dalpha = Kt(alpha, x) - pi cot(pi alpha) K(alpha, x).
/// At a zero of K (imaginary order) the derivative reduces to Kt itself.
/// Singular at integer orders.
pub fn bessel_k_tilde(order: Complex64, x: f64, policy: &PrecisionPolicy) -> Result<SpecialEval<Complex64>, SpecFunError> {
    policy.validate()?;
    if !(x > 0.0) {
        return Err(SpecFunError::NonPositiveArgument { what: "bessel_k_tilde x", value: x });
    }
    let dist = complex_integer_dist(order);
    if dist < 1e-8 {
        return Err(SpecFunError::PoleArgument { what: "bessel_k_tilde at integer order" });
    }
    if x <= 0.5 && dist >= 0.05 {
        Ok(ktilde_series(order, x))
    } else {
        // Kt = dK + pi cot(pi alpha) K from the differenced derivative
        let dk = dk_differenced(order, x, policy)?;
        let k = bessel_k_complex(order, x, policy)?;
        let value = dk.value + pi_cot_pi(order) * k.value;
        Ok(SpecialEval {
            value,
            err_est: dk.err_est + pi_cot_pi(order).norm() * k.err_est,
            method: Method::Differenced,
        })
    }
}

/// dK/dalpha at complex order. Series branch for x <= 0.5 away from integer
/// order, symmetric differencing otherwise (exactly zero at order 0).
pub fn bessel_k_order_derivative(order: Complex64, x: f64, policy: &PrecisionPolicy) -> Result<SpecialEval<Complex64>, SpecFunError> {
    policy.validate()?;
    if !(x > 0.0) {
        return Err(SpecFunError::NonPositiveArgument { what: "bessel_k_order_derivative x", value: x });
    }
    let dist = complex_integer_dist(order);
    if x <= 0.5 && dist >= 0.05 {
        let kt = ktilde_series(order, x);
        let k = if order.re == 0.0 {
            k_series_imag_order(order.im, x)
        } else {
            k_series_complex(order, x)
        };
        let value = kt.value - pi_cot_pi(order) * k.value;
        Ok(SpecialEval { value, err_est: kt.err_est + pi_cot_pi(order).norm() * k.err_est, method: Method::Series })
    } else {
        dk_differenced(order, x, policy)
    }
}

// ---- the ratio f(alpha, x) = x K_{alpha-1}(x) / K_alpha(x) ----

fn f_series_real(a: f64, x: f64) -> (f64, f64) {
    // common sine prefactors cancel:
    //   f = 2 [w2 It_{a-1} - (x^2/4) It_{1-a}] / [It_{-a} - w2 It_{a}],
    // w2 = (x/2)^{2a}; valid away from integer a
    let lnb = (0.5 * x).ln();
    let e2 = 2.0 * a * lnb;
    let w2 = if e2 < -745.0 { 0.0 } else { e2.exp() };
    let q = 0.25 * x * x;
    let t_num1 = w2 * itilde_real(a - 1.0, x);
    let t_num2 = q * itilde_real(1.0 - a, x);
    let t_den1 = itilde_real(-a, x);
    let t_den2 = w2 * itilde_real(a, x);
    let num = t_num1 - t_num2;
    let den = t_den1 - t_den2;
    let f = 2.0 * num / den;
    let cn = (t_num1.abs() + t_num2.abs()) / num.abs().max(f64::MIN_POSITIVE);
    let cd = (t_den1.abs() + t_den2.abs()) / den.abs().max(f64::MIN_POSITIVE);
    (f, 4e-16 * (1.0 + cn + cd) * f.abs())
}

fn f_integral_real(a: f64, x: f64, policy: &PrecisionPolicy) -> Result<(f64, f64), SpecFunError> {
    let b_num = (a - 1.0).abs();
    let b_den = a;
    let bmax = b_num.max(b_den).max(1.0);
    let t_max = ((760.0 + 40.0 * bmax) / x).acosh();
    let shift = (bmax * t_max - 650.0).max(0.0);
    let kernel = move |b: f64| {
        move |t: f64| -> f64 {
            let m = -x * t.cosh() + b * t - LN2 - shift;
            if m < -745.0 {
                return 0.0;
            }
            m.exp() * (1.0 + (-2.0 * b * t).exp())
        }
    };
    let qn = tanh_sinh(kernel(b_num), 0.0, t_max, 0.5 * policy.rel_tol, policy.abs_tol, policy.max_subdivisions)
        .map_err(|e| map_quad_err(e, policy.rel_tol))?;
    let qd = tanh_sinh(kernel(b_den), 0.0, t_max, 0.5 * policy.rel_tol, policy.abs_tol, policy.max_subdivisions)
        .map_err(|e| map_quad_err(e, policy.rel_tol))?;
    let f = x * qn.value / qd.value;
    let rel = qn.err_est / qn.value.abs().max(f64::MIN_POSITIVE) + qd.err_est / qd.value.abs().max(f64::MIN_POSITIVE);
    Ok((f, f.abs() * (rel + 4e-16)))
}

/// f(alpha, x) = x K_{alpha-1}(x)/K_alpha(x), normalized through the exact
/// shift f(-a) = f(a) + 2a so only a >= 0 is ever computed directly.
pub fn f_ratio(alpha: f64, x: f64, policy: &PrecisionPolicy) -> Result<SpecialEval<f64>, SpecFunError> {
    policy.validate()?;
    if !(x > 0.0) {
        return Err(SpecFunError::NonPositiveArgument { what: "f_ratio x", value: x });
    }
    let a = alpha.abs();
    let shift = if alpha < 0.0 { 2.0 * a } else { 0.0 };
    let dist = integer_dist(a);
    let (val, err, method) = if x <= 2.0 && dist >= 0.05 {
        let (v, e) = f_series_real(a, x);
        (v, e, Method::Series)
    } else if x <= 2.0 && dist < 1e-8 {
        let n = a.round() as u32;
        let kn = k_log_series(n, x);
        let knm1 = k_log_series(if n == 0 { 1 } else { n - 1 }, x);
        let v = x * knm1.value / kn.value;
        let e = v.abs() * (knm1.err_est / knm1.value.abs() + kn.err_est / kn.value.abs());
        (v, e, Method::LogSeries)
    } else {
        let (v, e) = f_integral_real(a, x, policy)?;
        (v, e, Method::Integral)
    };
    Ok(SpecialEval { value: val + shift, err_est: err, method })
}

/// Complex-order ratio; `NearPole` situations (K_alpha near a zero) surface
/// as `PoleArgument`.
pub fn f_ratio_c(alpha: Complex64, x: f64, policy: &PrecisionPolicy) -> Result<SpecialEval<Complex64>, SpecFunError> {
    policy.validate()?;
    if !(x > 0.0) {
        return Err(SpecFunError::NonPositiveArgument { what: "f_ratio_c x", value: x });
    }
    let flip = alpha.re < 0.0 || (alpha.re == 0.0 && alpha.im < 0.0);
    let a = if flip { -alpha } else { alpha };
    let shift = if flip { -2.0 * alpha } else { Complex64::new(0.0, 0.0) };
    let dist = complex_integer_dist(a);
    if a.im == 0.0 {
        let ev = f_ratio(a.re, x, policy)?;
        return Ok(SpecialEval {
            value: Complex64::new(ev.value, 0.0) + shift,
            err_est: ev.err_est,
            method: ev.method,
        });
    }
    if x <= 2.0 && dist >= 0.05 {
        let lnb = (0.5 * x).ln();
        let w2 = (2.0 * a * lnb).exp();
        let q = 0.25 * x * x;
        let t_num1 = w2 * itilde_complex(a - 1.0, x);
        let t_num2 = q * itilde_complex(1.0 - a, x);
        let t_den1 = itilde_complex(-a, x);
        let t_den2 = w2 * itilde_complex(a, x);
        let num = t_num1 - t_num2;
        let den = t_den1 - t_den2;
        let den_scale = t_den1.norm() + t_den2.norm();
        if den.norm() < 1e-13 * den_scale {
            return Err(SpecFunError::PoleArgument { what: "f_ratio_c at a zero of K" });
        }
        let f = 2.0 * num / den;
        let cn = (t_num1.norm() + t_num2.norm()) / num.norm().max(f64::MIN_POSITIVE);
        let cd = den_scale / den.norm();
        return Ok(SpecialEval {
            value: f + shift,
            err_est: 4e-16 * (1.0 + cn + cd) * f.norm(),
            method: Method::Series,
        });
    }
    // integral ratio
    let kn = bessel_k_complex(a - 1.0, x, policy)?;
    let kd = bessel_k_complex(a, x, policy)?;
    if kd.value.norm() < 1e-13 * (kn.value.norm() + 1e-300) || kd.value.norm() == 0.0 {
        return Err(SpecFunError::PoleArgument { what: "f_ratio_c at a zero of K" });
    }
    let f = x * kn.value / kd.value;
    let rel = kn.err_est / kn.value.norm().max(f64::MIN_POSITIVE) + kd.err_est / kd.value.norm().max(f64::MIN_POSITIVE);
    Ok(SpecialEval { value: f + shift, err_est: f.norm() * (rel + 4e-16), method: Method::Integral })
}

// ---- double-double ratio for the high-precision Taylor path ----

/// Per-order context holding the four gamma values the dd ratio needs.
pub struct DdRatioCtx {
    pub a: Dd,
    g_a_minus: Dd,  // Gamma(a)
    g_two_minus: Dd, // Gamma(2-a)
    g_one_minus: Dd, // Gamma(1-a)
    g_one_plus: Dd, // Gamma(1+a)
}

impl DdRatioCtx {
    /// a must be nonzero with |a| < 0.9.
    pub fn new(a: Dd) -> DdRatioCtx {
        assert!(a.hi != 0.0 && a.hi.abs() < 0.9, "DdRatioCtx order out of range");
        let one = Dd::ONE;
        // Gamma(a) for negative a via reflection would need sin_pi in dd;
        // instead use Gamma(a) = Gamma(1+a)/a, valid both signs
        let g_one_plus = crate::dd::gamma_dd(one.add(a));
        let g_one_minus = crate::dd::gamma_dd(one.sub(a));
        let g_a_minus = g_one_plus.div(a);
        let g_two_minus = g_one_minus.mul(one.sub(a));
        DdRatioCtx { a, g_a_minus, g_two_minus, g_one_minus, g_one_plus }
    }
}

/// f(a, x) in double-double via the cancellation-aware series ratio.
pub fn f_ratio_dd(ctx: &DdRatioCtx, x: Dd) -> Dd {
    let a = ctx.a;
    let half_x = x.mul_f64(0.5);
    let lnb = ln_dd(half_x);
    let q = half_x.sqr();
    let w2 = exp_dd(a.mul(lnb).mul_f64(2.0));
    let one = Dd::ONE;
    let it_am1 = itilde_dd(ctx.g_a_minus, a.sub(one), q);
    let it_1ma = itilde_dd(ctx.g_two_minus, one.sub(a), q);
    let it_ma = itilde_dd(ctx.g_one_minus, a.neg(), q);
    let it_a = itilde_dd(ctx.g_one_plus, a, q);
    let num = w2.mul(it_am1).sub(q.mul(it_1ma));
    let den = it_ma.sub(w2.mul(it_a));
    num.div(den).mul_f64(2.0)
}

/// f(0, x) in double-double through the integer-order log series,
/// f(0,x) = x K_1(x)/K_0(x).
pub fn f_ratio_zero_dd(x: Dd) -> Dd {
    let euler = Dd { hi: 5.772_156_649_015_328_7e-1, lo: -4.942_915_152_430_644_9e-18 };
    let half_x = x.mul_f64(0.5);
    let lnb = ln_dd(half_x);
    let q = half_x.sqr();
    // K0 = -(lnb + euler) I0 + sum H_k q^k/(k!)^2
    // K1 = 1/x + lnb (x/2) S1 - (x/4)(B - 2 euler S1)
    //   S1 = sum q^k/(k!(k+1)!), B = sum (H_k + H_{k+1}) q^k/(k!(k+1)!)
    let mut i0 = Dd::ONE;
    let mut a_sum = Dd::ZERO;
    let mut s1 = Dd::ONE;
    let mut b_sum = Dd::ONE; // k=0: H_0 + H_1 = 1
    let mut h_k = Dd::ZERO;
    let mut h_k1 = Dd::ONE;
    let mut qk = Dd::ONE;
    let mut kfac = Dd::ONE;
    let mut k1fac = Dd::ONE; // (k+1)! at k=0 is 1
    for k in 1..60 {
        let kf = k as f64;
        qk = qk.mul(q);
        kfac = kfac.mul_f64(kf);
        k1fac = k1fac.mul_f64(kf + 1.0);
        h_k = h_k.add(Dd::ONE.div(Dd::from_f64(kf)));
        h_k1 = h_k1.add(Dd::ONE.div(Dd::from_f64(kf + 1.0)));
        let w0 = qk.div(kfac.sqr());
        i0 = i0.add(w0);
        a_sum = a_sum.add(w0.mul(h_k));
        let w1 = qk.div(kfac.mul(k1fac));
        s1 = s1.add(w1);
        b_sum = b_sum.add(w1.mul(h_k.add(h_k1)));
        if w0.abs().to_f64() < 1e-35 * i0.abs().to_f64() {
            break;
        }
    }
    let k0 = lnb.add(euler).neg().mul(i0).add(a_sum);
    let k1 = x.recip()
        .add(lnb.mul(half_x).mul(s1))
        .sub(x.mul_f64(0.25).mul(b_sum.sub(euler.mul_f64(2.0).mul(s1))));
    x.mul(k1).div(k0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pol() -> PrecisionPolicy {
        PrecisionPolicy::default()
    }

    fn assert_rel(got: f64, want: f64, tol: f64) {
        let scale = want.abs().max(1e-300);
        assert!(
            (got - want).abs() <= tol * scale,
            "got {got:e}, want {want:e}, rel {:e}",
            (got - want).abs() / scale
        );
    }

    #[test]
    fn k_series_branch() {
        let ev = bessel_k(0.3, 0.5, &pol()).unwrap();
        assert_eq!(ev.method, Method::Series);
        assert_rel(ev.value, 0.976474124381787921023, 1e-13);
        assert_rel(bessel_k(-1.3, 0.5, &pol()).unwrap().value, 2.41022687633112623589, 1e-13);
        assert_rel(bessel_k(2.7, 0.01, &pol()).unwrap().value, 1260621.68374895782294, 1e-13);
        assert_rel(bessel_k(-0.5, 0.5, &pol()).unwrap().value, 1.07504760349992023872, 1e-13);
        assert_rel(bessel_k(0.3, 2.0, &pol()).unwrap().value, 0.116036974348119258522, 1e-12);
    }

    #[test]
    fn k_log_series_branch() {
        let ev = bessel_k(0.0, 0.5, &pol()).unwrap();
        assert_eq!(ev.method, Method::LogSeries);
        assert_rel(ev.value, 0.924419071227665861782, 1e-13);
        assert_rel(bessel_k(1.0, 0.5, &pol()).unwrap().value, 1.6564411200033008937, 1e-13);
        assert_rel(bessel_k(2.0, 0.5, &pol()).unwrap().value, 7.55018355124086943657, 1e-13);
        assert_rel(bessel_k(-2.0, 0.5, &pol()).unwrap().value, 7.55018355124086943657, 1e-13);
        assert_rel(bessel_k(5.0, 0.01, &pol()).unwrap().value, 3839976000099.99958334, 1e-13);
        assert_rel(bessel_k(0.0, 2.0, &pol()).unwrap().value, 0.113893872749533435653, 1e-13);
        // near-integer snap: value agrees with the true order to ~|dK| * dist
        assert_rel(bessel_k(2.00000000001, 0.01, &pol()).unwrap().value, 19999.5000695336073579, 1e-9);
        assert_rel(bessel_k(1.000000001, 0.5, &pol()).unwrap().value, 1.65644112185213903796, 5e-9);
    }

    #[test]
    fn k_integral_branch() {
        let ev = bessel_k(0.97, 0.5, &pol()).unwrap();
        assert_eq!(ev.method, Method::Integral);
        assert_rel(ev.value, 1.60257227263167445507, 1e-12);
        assert_rel(bessel_k(1.03, 2.0, &pol()).unwrap().value, 0.141609769383027427442, 1e-12);
        assert_rel(bessel_k(0.3, 5.0, &pol()).unwrap().value, 0.00372166932887342549927, 1e-12);
        assert_rel(bessel_k(2.7, 5.0, &pol()).unwrap().value, 0.00712624875563333095193, 1e-12);
        assert_rel(bessel_k(-1.3, 20.0, &pol()).unwrap().value, 5.98291975883092282146e-10, 1e-12);
        assert_rel(bessel_k(5.0, 5.0, &pol()).unwrap().value, 0.0327062737120318578834, 1e-12);
        assert_rel(bessel_k(0.0, 20.0, &pol()).unwrap().value, 5.74123781533652429272e-10, 1e-12);
    }

    #[test]
    fn k_rejects_bad_input() {
        assert!(bessel_k(0.3, 0.0, &pol()).is_err());
        assert!(bessel_k(0.3, -1.0, &pol()).is_err());
        assert!(bessel_k(f64::NAN, 1.0, &pol()).is_err());
    }

    #[test]
    fn k_complex_spots() {
        let ev = bessel_k_complex(Complex64::new(0.3, 0.5), 0.7, &pol()).unwrap();
        assert_rel(ev.value.re, 0.605970004433604890293, 1e-12);
        assert_rel(ev.value.im, 0.088827290658592065189, 1e-12);
        let ev = bessel_k_complex(Complex64::new(2.5, -1.2), 1.3, &pol()).unwrap();
        assert_rel(ev.value.re, 0.0332966710916000897181, 1e-11);
        assert_rel(ev.value.im, -1.16395330799490510527, 1e-12);
        // purely imaginary order comes out exactly real
        let ev = bessel_k_complex(Complex64::new(0.0, 0.5), 0.01, &pol()).unwrap();
        assert_eq!(ev.value.im, 0.0);
        assert_rel(ev.value.re, 1.10988609054512788601, 1e-12);
        let ev = bessel_k_complex(Complex64::new(0.0, 2.0), 1.0, &pol()).unwrap();
        assert_eq!(ev.value.im, 0.0);
        assert_rel(ev.value.re, 0.0806169976223659785698, 1e-12);
        let ev = bessel_k_complex(Complex64::new(0.05, 0.443), 0.001, &pol()).unwrap();
        assert_rel(ev.value.re, -0.104130184102811672833, 1e-11);
        assert_rel(ev.value.im, 0.704669045165869285108, 1e-11);
        // conjugation symmetry
        let a = Complex64::new(0.4, 0.9);
        let k1 = bessel_k_complex(a, 0.8, &pol()).unwrap().value;
        let k2 = bessel_k_complex(a.conj(), 0.8, &pol()).unwrap().value;
        assert!((k1 - k2.conj()).norm() < 1e-13 * k1.norm());
    }

    #[test]
    fn order_derivative_spots() {
        // at order 1/2 the cot term vanishes: dK = Kt
        let dk = bessel_k_order_derivative(Complex64::new(0.5, 0.0), 0.8, &pol()).unwrap();
        assert!(dk.value.im.abs() < 1e-13);
        assert_rel(dk.value.re, 0.269155502376232592841, 1e-8);
        let kt = bessel_k_tilde(Complex64::new(0.5, 0.0), 0.8, &pol()).unwrap();
        assert_rel(kt.value.re, 0.269155502376232592841, 1e-8);
        // series branch (x <= 0.5)
        let dk = bessel_k_order_derivative(Complex64::new(0.3, 0.0), 0.5, &pol()).unwrap();
        assert_eq!(dk.method, Method::Series);
        assert_rel(dk.value.re, 0.354985893804108290571, 1e-12);
        let kt = bessel_k_tilde(Complex64::new(0.3, 0.0), 0.5, &pol()).unwrap();
        assert_rel(kt.value.re, 2.58378873548063802507, 1e-12);
        let kt = bessel_k_tilde(Complex64::new(0.3, 0.0), 0.05, &pol()).unwrap();
        assert_rel(kt.value.re, 13.703249820057540962, 1e-12);
        let kt = bessel_k_tilde(Complex64::new(-0.4, 0.0), 0.3, &pol()).unwrap();
        assert_rel(kt.value.re, -2.66171898959237627986, 1e-12);
        let dk = bessel_k_order_derivative(Complex64::new(-0.4, 0.0), 0.3, &pol()).unwrap();
        assert_rel(dk.value.re, -1.05645177135199320901, 1e-12);
        // differenced branch (x > 0.5)
        let dk = bessel_k_order_derivative(Complex64::new(0.2, 0.0), 2.0, &pol()).unwrap();
        assert_eq!(dk.method, Method::Differenced);
        assert_rel(dk.value.re, 0.00951581821564167536716, 1e-8);
        let kt = bessel_k_tilde(Complex64::new(0.2, 0.0), 2.0, &pol()).unwrap();
        assert_rel(kt.value.re, 0.506095685939368812039, 1e-8);
        let dk = bessel_k_order_derivative(Complex64::new(0.45, 0.0), 5.0, &pol()).unwrap();
        assert_rel(dk.value.re, 0.00030993424438566158535, 1e-7);
        let kt = bessel_k_tilde(Complex64::new(0.45, 0.0), 5.0, &pol()).unwrap();
        assert_rel(kt.value.re, 0.00218094315096265611881, 1e-7);
        // integer orders: derivative via differencing, Kt singular
        let dk = bessel_k_order_derivative(Complex64::new(0.0, 0.0), 0.7, &pol()).unwrap();
        assert!(dk.value.norm() < 1e-12);
        let dk = bessel_k_order_derivative(Complex64::new(2.0, 0.0), 1.0, &pol()).unwrap();
        assert_rel(dk.value.re, 2.04586333687588581615, 1e-8);
        let dk = bessel_k_order_derivative(Complex64::new(1.0, 0.0), 0.5, &pol()).unwrap();
        assert_rel(dk.value.re, 1.84883814245533172356, 1e-8);
        assert!(bessel_k_tilde(Complex64::new(1.0, 0.0), 0.5, &pol()).is_err());
    }

    #[test]
    fn ktilde_imag_order_is_imaginary() {
        let kt = bessel_k_tilde(Complex64::new(0.0, 0.442776288049840232448), 0.001, &pol()).unwrap();
        assert_eq!(kt.value.re, 0.0);
        assert_rel(kt.value.im, 14.0187265543265369815, 1e-11);
    }

    #[test]
    fn f_ratio_spots() {
        // half-integer exact value f(1, 0.5)... order alpha=1 is the integer
        // branch; f(0.5, 1) = 1 exactly is the half-integer identity
        let ev = f_ratio(0.5, 1.0, &pol()).unwrap();
        assert_rel(ev.value, 1.0, 1e-14);
        assert_rel(f_ratio(0.3, 0.01, &pol()).unwrap().value, 0.0383649995559123367108, 1e-12);
        assert_rel(f_ratio(-0.3, 0.01, &pol()).unwrap().value, 0.638364999555912336711, 1e-12);
        assert_rel(f_ratio(0.7, 0.1, &pol()).unwrap().value, 0.055375707582059204622, 1e-12);
        assert_rel(f_ratio(2.4, 0.05, &pol()).unwrap().value, 0.000891946687967418034242, 1e-12);
        assert_rel(f_ratio(0.0, 0.001, &pol()).unwrap().value, 0.142374792868957498084, 1e-12);
        assert_rel(f_ratio(1.0, 0.5, &pol()).unwrap().value, 0.279037709238292669935, 1e-12);
        // exact shift identity by construction
        let a = 0.37;
        let f1 = f_ratio(-a, 0.6, &pol()).unwrap().value;
        let f2 = f_ratio(a, 0.6, &pol()).unwrap().value;
        assert!((f1 - f2 - 2.0 * a).abs() < 1e-15);
        // integral branch continuity against series at x crossing 2
        let fs = f_ratio(0.3, 1.999, &pol()).unwrap().value;
        let fi = f_ratio(0.3, 2.001, &pol()).unwrap().value;
        assert!((fs - fi).abs() < 2e-3 * fs.abs());
    }

    #[test]
    fn f_ratio_dd_matches_f64() {
        let ctx = DdRatioCtx::new(Dd::from_f64(1e-4));
        let v = f_ratio_dd(&ctx, Dd::from_f64(0.25));
        let w = f_ratio(1e-4, 0.25, &pol()).unwrap().value;
        assert!((v.to_f64() - w).abs() < 1e-16 + 1e-12 * w.abs());
        let v0 = f_ratio_zero_dd(Dd::from_f64(0.001));
        assert_rel(v0.to_f64(), 0.142374792868957498084, 1e-13);
    }

    #[test]
    fn f_ratio_c_near_pole_detected() {
        // close to the first zero of K_{i nu}(0.1) at nu ~ 1.1419
        let z = Complex64::new(0.0, 1.14187501354890663503);
        let err = f_ratio_c(z + Complex64::new(1e-15, 0.0), 0.1, &pol());
        assert!(err.is_err());
        // a bit away it evaluates fine
        let ok = f_ratio_c(z + Complex64::new(0.05, 0.0), 0.1, &pol());
        assert!(ok.is_ok());
    }
}
