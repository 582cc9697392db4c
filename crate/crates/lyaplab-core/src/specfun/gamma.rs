//! Gamma-family helpers: complex log-gamma (Lanczos), real gamma and its
//! reciprocal, digamma for real and complex arguments, the continuous
//! argument of Gamma(1+it), and the upper incomplete gamma function.

use super::SpecFunError;
use num_complex::Complex64;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Principal log-gamma on the right half-plane, reflected for Re z < 0.5.
/// Continuous (no branch jumps) for Re z >= 0.5, which is the regime every
/// internal caller uses.
pub fn lngamma_complex(z: Complex64) -> Complex64 {
    if z.re < 0.5 {
        // ln Gamma(z) = ln(pi / sin(pi z)) - ln Gamma(1 - z)
        let pi = std::f64::consts::PI;
        let s = (pi * z).sin();
        return Complex64::new(pi, 0.0).ln() - s.ln() - lngamma_complex(Complex64::new(1.0, 0.0) - z);
    }
    let zm1 = z - 1.0;
    let mut acc = Complex64::new(LANCZOS[0], 0.0);
    for (k, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (zm1 + k as f64);
    }
    let t = zm1 + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (zm1 + 0.5) * t.ln() - t + acc.ln()
}

/// Gamma for real arguments, any sign (poles give +-inf).
pub fn gamma_real(x: f64) -> f64 {
    if x >= 0.5 {
        lngamma_complex(Complex64::new(x, 0.0)).re.exp()
    } else if x == x.floor() {
        f64::INFINITY
    } else {
        let pi = std::f64::consts::PI;
        let s = (pi * x).sin();
        pi / (s * gamma_real(1.0 - x))
    }
}

/// 1/Gamma for real arguments; entire, exactly zero at the poles of Gamma.
pub fn rgamma_real(x: f64) -> f64 {
    if x >= 0.5 {
        (-lngamma_complex(Complex64::new(x, 0.0)).re).exp()
    } else if x == x.floor() {
        0.0
    } else {
        let pi = std::f64::consts::PI;
        (pi * x).sin() * gamma_real(1.0 - x) / pi
    }
}

/// 1/Gamma for complex arguments; entire.
pub fn rgamma_complex(z: Complex64) -> Complex64 {
    if z.re >= 0.5 {
        (-lngamma_complex(z)).exp()
    } else {
        let pi = std::f64::consts::PI;
        (pi * z).sin() * (lngamma_complex(Complex64::new(1.0, 0.0) - z) - pi.ln()).exp()
    }
}

// B_{2j}/(2j) for the digamma asymptotic tail, j = 1..=8
const DIGAMMA_TAIL: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
];

/// Digamma for complex arguments: reflection onto Re z >= 0.5, recurrence up
/// to |z| >= 10, then the Bernoulli asymptotic series.
pub fn digamma(z: Complex64) -> Result<super::SpecialEval<Complex64>, SpecFunError> {
    if z.im == 0.0 && z.re <= 0.0 && z.re == z.re.floor() {
        return Err(SpecFunError::PoleArgument { what: "digamma at a nonpositive integer" });
    }
    let mut zz = z;
    let mut acc = Complex64::new(0.0, 0.0);
    if zz.re < 0.5 {
        // psi(z) = psi(1-z) - pi cot(pi z)
        let pi = std::f64::consts::PI;
        let piz = pi * zz;
        acc -= pi * piz.cos() / piz.sin();
        zz = Complex64::new(1.0, 0.0) - zz;
    }
    while zz.norm() < 10.0 {
        acc -= 1.0 / zz;
        zz += 1.0;
    }
    let inv = 1.0 / zz;
    let inv2 = inv * inv;
    let mut tail = Complex64::new(0.0, 0.0);
    let mut p = inv2;
    for c in DIGAMMA_TAIL.iter() {
        tail += c * p;
        p *= inv2;
    }
    let value = acc + zz.ln() - 0.5 * inv - tail;
    Ok(super::SpecialEval { value, err_est: 4e-16 * (1.0 + value.norm()), method: super::Method::Series })
}

/// Digamma restricted to real arguments.
pub fn digamma_real(x: f64) -> Result<f64, SpecFunError> {
    Ok(digamma(Complex64::new(x, 0.0))?.value.re)
}

/// arg Gamma(1 + i t), the branch continuous in t with value 0 at t = 0.
pub fn arg_gamma_one_plus_it(t: f64) -> f64 {
    lngamma_complex(Complex64::new(1.0, t)).im
}

/// Upper incomplete gamma Gamma(s, x) for s > 0, x >= 0.
///
/// Series for the lower function when x < s + 1, Lentz continued fraction
/// otherwise.
pub fn gamma_upper(s: f64, x: f64) -> Result<f64, SpecFunError> {
    if !(s > 0.0) {
        return Err(SpecFunError::InvalidOrder { what: "gamma_upper needs s > 0" });
    }
    if x < 0.0 {
        return Err(SpecFunError::NonPositiveArgument { what: "gamma_upper x", value: x });
    }
    if x == 0.0 {
        return Ok(gamma_real(s));
    }
    if x < s + 1.0 {
        // gamma(s,x) series, then complement
        let mut term = 1.0 / s;
        let mut sum = term;
        let mut k = 1.0;
        while term.abs() > 1e-18 * sum.abs() && k < 500.0 {
            term *= x / (s + k);
            sum += term;
            k += 1.0;
        }
        let lower = sum * (s * x.ln() - x).exp();
        Ok(gamma_real(s) - lower)
    } else {
        // continued fraction: Gamma(s,x) = e^{-x} x^s / (x+1-s- 1(1-s)/(x+3-s- ...))
        let tiny = 1e-300;
        let mut b = x + 1.0 - s;
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
        Ok((s * x.ln() - x).exp() * h)
    }
}
