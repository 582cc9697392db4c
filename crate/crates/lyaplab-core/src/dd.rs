//! Double-double arithmetic: an unevaluated sum of two f64 giving ~31
//! significant digits. Used where f64 cancellation would destroy the result,
//! chiefly the finite-difference Taylor extraction in [`crate::mccoywu`].
//!
//! Algorithms are the classic error-free transformations (Dekker, Knuth) plus
//! exp/ln/gamma built on them. Nothing here is performance-critical.

/// Unit roundoff of the format, roughly 4.93e-32.
pub const EPS_DD: f64 = 4.93e-32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    pub const LN2: Dd = Dd { hi: 6.931_471_805_599_452_9e-1, lo: 2.319_046_813_846_299_6e-17 };
    pub const PI: Dd = Dd { hi: 3.141_592_653_589_793_1, lo: 1.224_646_799_147_353_2e-16 };
    pub const LN_2PI_HALF: Dd = Dd { hi: 9.189_385_332_046_727_8e-1, lo: -3.878_294_158_067_241_5e-17 };

    #[inline]
    pub fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn new(hi: f64, lo: f64) -> Dd {
        let (s, e) = quick_two_sum(hi, lo);
        Dd { hi: s, lo: e }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn add(self, o: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, o.hi);
        let (t1, t2) = two_sum(self.lo, o.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        Dd { hi, lo }
    }

    #[inline]
    pub fn add_f64(self, o: f64) -> Dd {
        let (s1, s2) = two_sum(self.hi, o);
        let (hi, lo) = quick_two_sum(s1, s2 + self.lo);
        Dd { hi, lo }
    }

    #[inline]
    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    #[inline]
    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    #[inline]
    pub fn mul(self, o: Dd) -> Dd {
        let (p1, p2) = two_prod(self.hi, o.hi);
        let p2 = p2 + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = quick_two_sum(p1, p2);
        Dd { hi, lo }
    }

    #[inline]
    pub fn mul_f64(self, o: f64) -> Dd {
        let (p1, p2) = two_prod(self.hi, o);
        let (hi, lo) = quick_two_sum(p1, p2 + self.lo * o);
        Dd { hi, lo }
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul_f64(q1));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul_f64(q2));
        let q3 = r.hi / o.hi;
        let (s, e) = quick_two_sum(q1, q2);
        Dd::new(s, e + q3)
    }

    #[inline]
    pub fn recip(self) -> Dd {
        Dd::ONE.div(self)
    }

    pub fn abs(self) -> Dd {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) { self.neg() } else { self }
    }

    pub fn sqr(self) -> Dd {
        self.mul(self)
    }

    /// Integer power by repeated squaring.
    pub fn powi(self, n: i32) -> Dd {
        if n == 0 {
            return Dd::ONE;
        }
        let mut base = if n < 0 { self.recip() } else { self };
        let mut e = n.unsigned_abs();
        let mut acc = Dd::ONE;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(base);
            }
            base = base.sqr();
            e >>= 1;
        }
        acc
    }
}

/// exp in double-double. Argument reduction by ln 2, then a scaled Taylor
/// series (r/512) re-squared 9 times.
pub fn exp_dd(a: Dd) -> Dd {
    if a.hi > 709.0 {
        return Dd::from_f64(f64::INFINITY);
    }
    if a.hi < -709.0 {
        return Dd::ZERO;
    }
    let k = (a.hi / std::f64::consts::LN_2).round();
    let r = a.sub(Dd::LN2.mul_f64(k));
    let r = r.mul_f64(1.0 / 512.0);
    // e^r - 1 by Taylor, |r| <= ~7e-4; divide by the exact integer so the
    // low-order terms stay clean
    let mut term = r;
    let mut sum = r;
    for n in 2..=12 {
        term = term.mul(r).div(Dd::from_f64(n as f64));
        sum = sum.add(term);
        if term.hi.abs() < 1e-35 * sum.hi.abs() {
            break;
        }
    }
    // (1+s)^2 - 1 = 2s + s^2, applied 9 times to stay accurate near zero
    for _ in 0..9 {
        sum = sum.mul_f64(2.0).add(sum.sqr());
    }
    let e = sum.add_f64(1.0);
    let scale = f64::powi(2.0, k as i32);
    Dd { hi: e.hi * scale, lo: e.lo * scale }
}

/// Natural log by Newton iteration on exp_dd, seeded from f64 ln.
pub fn ln_dd(a: Dd) -> Dd {
    assert!(a.hi > 0.0, "ln_dd needs a positive argument");
    let mut y = Dd::from_f64(a.hi.ln());
    for _ in 0..2 {
        // y += a e^{-y} - 1
        y = y.add(a.mul(exp_dd(y.neg())).add_f64(-1.0));
    }
    y
}

/// sin in double-double by plain Taylor; accurate for |a| <= 1 which covers
/// every internal use (reduced sin(pi*alpha) with small alpha).
pub fn sin_small_dd(a: Dd) -> Dd {
    debug_assert!(a.hi.abs() <= 1.2);
    let a2 = a.sqr();
    let mut term = a;
    let mut sum = a;
    let mut n = 1.0f64;
    loop {
        term = term.mul(a2).div(Dd::from_f64(-(n + 1.0) * (n + 2.0)));
        sum = sum.add(term);
        n += 2.0;
        if term.hi.abs() < 1e-34 * (1.0 + sum.hi.abs()) || n > 40.0 {
            break;
        }
    }
    sum
}

/// sin(pi * a) for |a| < 0.35, with the pi multiplication done in dd.
pub fn sin_pi_dd(a: Dd) -> Dd {
    sin_small_dd(Dd::PI.mul(a))
}

// B_{2j} for j = 1..=16 as exact integer pairs (numerator, denominator).
const BERN: [(f64, f64); 16] = [
    (1.0, 6.0),
    (-1.0, 30.0),
    (1.0, 42.0),
    (-1.0, 30.0),
    (5.0, 66.0),
    (-691.0, 2730.0),
    (7.0, 6.0),
    (-3617.0, 510.0),
    (43867.0, 798.0),
    (-174611.0, 330.0),
    (854513.0, 138.0),
    (-236364091.0, 2730.0),
    (8553103.0, 6.0),
    (-23749461029.0, 870.0),
    (8615841276005.0, 14322.0),
    (-7709321041217.0, 510.0),
];

/// ln Gamma by the Stirling series, valid for z >= 32.
fn lngamma_stirling_dd(z: Dd) -> Dd {
    let lnz = ln_dd(z);
    let mut s = z.add_f64(-0.5).mul(lnz).sub(z).add(Dd::LN_2PI_HALF);
    let zinv2 = z.recip().sqr();
    let mut zp = z.recip();
    for (j, (num, den)) in BERN.iter().enumerate() {
        let tj = 2.0 * (j as f64 + 1.0);
        let coeff = Dd::from_f64(*num).div(Dd::from_f64(den * tj * (tj - 1.0)));
        s = s.add(coeff.mul(zp));
        zp = zp.mul(zinv2);
    }
    s
}

/// Gamma(z) in double-double for 0 < z < 170: recurrence up to z >= 32 then
/// Stirling.
pub fn gamma_dd(z: Dd) -> Dd {
    assert!(z.hi > 0.0, "gamma_dd needs a positive argument");
    let m = if z.hi >= 32.0 { 0 } else { (32.0 - z.hi).ceil() as usize };
    let zs = z.add_f64(m as f64);
    let lg = lngamma_stirling_dd(zs);
    let mut g = exp_dd(lg);
    for k in 0..m {
        g = g.div(z.add_f64(k as f64));
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Dd, hi: f64, lo: f64, tol: f64) {
        let want = Dd::new(hi, lo);
        let diff = a.sub(want).abs().to_f64();
        let scale = want.abs().to_f64().max(1e-300);
        assert!(
            diff <= tol * scale,
            "dd mismatch: got ({:e},{:e}) want ({:e},{:e}) rel {:e}",
            a.hi, a.lo, hi, lo, diff / scale
        );
    }

    #[test]
    fn arithmetic_round_trip() {
        let a = Dd::from_f64(1.0).div(Dd::from_f64(3.0));
        let b = a.mul_f64(3.0);
        assert!((b.to_f64() - 1.0).abs() < 1e-31);
        let c = a.add(a).add(a).add_f64(-1.0);
        assert!(c.to_f64().abs() < 1e-31);
    }

    #[test]
    fn exp_ln_targets() {
        // reference splits from a 50-digit computation at the exact
        // double-precision arguments
        close(exp_dd(Dd::from_f64(0.123456)), 1.1314002218371064e0, -1.3607043982087397e-17, 1e-27);
        close(exp_dd(Dd::from_f64(-20.25)), 1.6052280551856116e-9, -3.657643988865463e-26, 1e-27);
        close(ln_dd(Dd::from_f64(2.0)), 6.931471805599453e-1, 2.3190468138462996e-17, 1e-27);
        close(ln_dd(Dd::from_f64(0.03)), -3.506557897319982e0, 8.43862332472314e-17, 1e-27);
        let e1 = exp_dd(ln_dd(Dd::from_f64(7.25))).add_f64(-7.25);
        assert!(e1.to_f64().abs() < 1e-27);
    }

    #[test]
    fn sin_pi_small() {
        close(sin_pi_dd(Dd::from_f64(0.001)), 3.1415874858795635e-3, -1.0094577539074328e-19, 1e-28);
        close(sin_pi_dd(Dd::from_f64(0.32)), 8.443279255020151e-1, 1.445220433502204e-17, 1e-28);
    }

    #[test]
    fn gamma_targets() {
        close(gamma_dd(Dd::from_f64(0.7)), 1.298055332647558e0, -4.633829453496105e-17, 1e-26);
        close(gamma_dd(Dd::from_f64(1.35)), 8.911514420243009e-1, -5.432922899018247e-17, 1e-26);
        close(gamma_dd(Dd::from_f64(5.5)), 5.234277778455352e1, 1.2539803835511586e-15, 1e-26);
        close(gamma_dd(Dd::from_f64(25.25)), 1.3821549138373968e24, 1.19338690368859082e8, 1e-26);
        // Gamma(1+1e-4), the tiny-argument regime the FD stencils live in
        close(gamma_dd(Dd::from_f64(1.0001)), 9.999422883231625e-1, -2.8264867143253206e-17, 1e-26);
        // Gamma(n) exact at small integers
        assert!((gamma_dd(Dd::from_f64(6.0)).to_f64() - 120.0).abs() < 1e-25);
    }
}
