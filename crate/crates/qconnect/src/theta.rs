//! Jacobi theta series and the special functions built from it.
//!
//! Theta_q(z) = sum over n in Z of q^{-n(n-1)/2} z^n converges for |q| > 1 on
//! all of C*. It satisfies Theta(qz) = + qz Theta(z) (the sign is pinned down
//! empirically in the tests by direct summation) and its zeros form the
//! discrete spiral -q^Z. Evaluation reduces the argument to the fundamental
//! annulus through the functional equation, then uses the triple product
//! (p;p)(-z;p)(-p/z;p), p = 1/q, whose relative error is bounded even next
//! to the zeros; the bilateral sum is the fallback when |q| is too close
//! to 1 for the product to fit the term budget. Built on top of Theta:
//!
//! - the q-logarithm l_q(z) = z Theta'(z) / Theta(z) with l_q(qz) = l_q(z) + 1,
//! - the q-characters e_{q,c}(z) = z^{eps(c)} Theta(z) / Theta(c_bar^{-1} z)
//!   with e_{q,c}(qz) = c e_{q,c}(z) and e_{q,q^n} = z^n,
//! - the scalar cocycle phi(c,d) = e_{q,c} e_{q,d} / e_{q,cd} (elliptic),
//! - the twisting factor psi_a(c) = g_a(c) / e_{q,c}(a), which depends on c
//!   only through its annulus reduction.
//!
//! Each function also exists in a "negated argument" variant built on
//! Theta(-z), whose poles and zeros sit on +q^Z instead.

use crate::error::{QError, Result};
use crate::qcore::{annulus_decompose, char_eval, CharacterSpec, QParameter};
use crate::C64;

/// Stopping rule for bilateral series: relative target for the geometric
/// tail bound and a hard cap on the number of term pairs.
///
/// Invariants: target >= 1e-15 (f64 cannot do better) and max_terms <= 200.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesTolerance {
    target: f64,
    max_terms: usize,
}

impl SeriesTolerance {
    pub fn new(target: f64, max_terms: usize) -> Result<Self> {
        if !(target >= 1e-15) {
            return Err(QError::Contract(format!(
                "series target {target} is tighter than 1e-15"
            )));
        }
        if max_terms == 0 || max_terms > 200 {
            return Err(QError::Contract(format!(
                "max_terms {max_terms} outside 1..=200"
            )));
        }
        Ok(SeriesTolerance { target, max_terms })
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn max_terms(&self) -> usize {
        self.max_terms
    }
}

impl Default for SeriesTolerance {
    fn default() -> Self {
        SeriesTolerance { target: 1e-15, max_terms: 200 }
    }
}

/// Which sign the theta argument carries: the standard functions have their
/// zero/pole spirals on -q^Z, the negated variant on +q^Z.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaBranch {
    Standard,
    Negated,
}

/// Compensated (Neumaier) accumulator for complex sums; bilateral theta
/// sums cancel heavily near the zero spiral and plain summation loses
/// several digits there.
#[derive(Clone, Copy)]
struct Compensated {
    s: C64,
    c: C64,
}

impl Compensated {
    fn zero() -> Self {
        Compensated { s: C64::new(0.0, 0.0), c: C64::new(0.0, 0.0) }
    }

    fn add(&mut self, v: C64) {
        let t = self.s + v;
        let comp_re = if self.s.re.abs() >= v.re.abs() {
            (self.s.re - t.re) + v.re
        } else {
            (v.re - t.re) + self.s.re
        };
        let comp_im = if self.s.im.abs() >= v.im.abs() {
            (self.s.im - t.im) + v.im
        } else {
            (v.im - t.im) + self.s.im
        };
        self.c += C64::new(comp_re, comp_im);
        self.s = t;
    }

    fn value(&self) -> C64 {
        self.s + self.c
    }
}

/// Single series term t_n = q^{-n(n-1)/2} w^n, binary powering throughout so
/// the per-term error stays at a few ulp independent of n.
fn theta_term(qq: C64, w: C64, n: i64) -> C64 {
    let a = (n * (n - 1)) / 2;
    qq.powi(-(a as i32)) * w.powi(n as i32)
}

/// Theta and Theta' via the triple product
/// (p;p)_inf (-w;p)_inf (-p/w;p)_inf with p = 1/q, truncated after n_factors
/// of each kind. Unlike the bilateral sum, the product never cancels: each
/// factor is computed to a few ulp of itself, so the relative error stays at
/// ~ n_factors * eps even when w sits close to a zero and Theta is tiny.
fn theta_pair_by_product(q: &QParameter, w: C64, n_factors: usize) -> (C64, C64) {
    let p = C64::new(1.0, 0.0) / q.q();
    let mut prod = C64::new(1.0, 0.0);
    let mut dlog = C64::new(0.0, 0.0);
    // At most one factor can vanish (the zeros are simple); if one does,
    // Theta is exactly 0 and Theta' is the rest times that factor's slope.
    let mut zero_slope: Option<C64> = None;
    let mut pk = C64::new(1.0, 0.0); // p^k
    for _ in 0..n_factors {
        let up = C64::new(1.0, 0.0) + w * pk; // 1 + w p^k, zero at w = -q^k
        if up.norm() == 0.0 {
            zero_slope = Some(pk);
        } else {
            prod *= up;
            dlog += pk / up;
        }
        let pk1 = pk * p; // p^{k+1}
        let dn = C64::new(1.0, 0.0) + pk1 / w; // 1 + p^{k+1}/w
        if dn.norm() == 0.0 {
            zero_slope = Some(-pk1 / (w * w));
        } else {
            prod *= dn;
            dlog += -(pk1 / w) / (w * dn);
        }
        prod *= C64::new(1.0, 0.0) - pk1; // the constant (p;p)_inf
        pk = pk1;
    }
    match zero_slope {
        None => (prod, prod * dlog),
        Some(slope) => (C64::new(0.0, 0.0), prod * slope),
    }
}

/// Factors of each kind needed so the dropped product tail stays below the
/// relative target, or None if the budget does not allow it.
fn product_factor_count(abs_q: f64, abs_w: f64, tol: &SeriesTolerance) -> Option<usize> {
    let abs_p = 1.0 / abs_q;
    let m = abs_w.max(1.0 / abs_w) + 1.0;
    // Tail of log-product is bounded by 2 m |p|^K / (1 - |p|).
    let need = tol.target * (1.0 - abs_p) / (2.0 * m);
    let k = (need.ln() / abs_p.ln()).ceil();
    if k.is_finite() && k >= 1.0 && (k as usize) <= tol.max_terms {
        Some(k as usize)
    } else {
        None
    }
}

/// Theta and Theta' at a point of the fundamental annulus.
///
/// Primary route is the triple product, which keeps the relative error
/// bounded everywhere, including next to the zero spiral where the bilateral
/// sum cancels catastrophically (for |q| = 1.5 the sum is conditioned like
/// 1e5 between consecutive zeros). When |q| is so close to 1 that the
/// product needs more factors than the budget allows, fall back to the
/// symmetric bilateral sum with a geometric tail bound; in that regime the
/// series needs few terms and its callers stay away from the spiral.
fn theta_pair_in_annulus(q: &QParameter, w: C64, tol: &SeriesTolerance) -> Result<(C64, C64)> {
    let qq = q.q();
    let abs_q = qq.norm();
    let abs_w = w.norm();

    if let Some(n_factors) = product_factor_count(abs_q, abs_w, tol) {
        return Ok(theta_pair_by_product(q, w, n_factors));
    }

    let mut sum = Compensated::zero();
    let mut dsum = Compensated::zero(); // accumulates n * t_n; Theta' = dsum / w
    let mut scale = 1.0f64;
    sum.add(C64::new(1.0, 0.0));
    for n in 1..=tol.max_terms as i64 {
        let t_up = theta_term(qq, w, n);
        let t_dn = theta_term(qq, w, -n);
        sum.add(t_up);
        sum.add(t_dn);
        let nf = C64::new(n as f64, 0.0);
        dsum.add(nf * t_up);
        dsum.add(-nf * t_dn);
        scale = scale.max(t_up.norm()).max(t_dn.norm());

        // Geometric bounds on both tails once the ratios drop below 1.
        let r_up = abs_w / abs_q.powi(n as i32);
        let r_dn = 1.0 / (abs_w * abs_q.powi(n as i32 + 1));
        if r_up < 0.5 && r_dn < 0.5 {
            let bound =
                t_up.norm() * r_up / (1.0 - r_up) + t_dn.norm() * r_dn / (1.0 - r_dn);
            // Theta' tails carry an extra factor ~ n, absorbed by the 0.5 cap.
            let dbound = bound * (n as f64 + 2.0) * 2.0;
            // Near the zero spiral the sum cancels below the term scale; keep
            // the target relative to the cancelled value, with a floor far
            // beyond f64 so evaluation exactly on a zero still stops.
            let s_goal = (tol.target * sum.value().norm()).max(1e-21 * scale);
            let d_goal = (tol.target * dsum.value().norm()).max(1e-21 * scale);
            if bound <= s_goal && dbound <= d_goal {
                return Ok((sum.value(), dsum.value() / w));
            }
        }
    }
    Err(QError::NoConvergence(format!(
        "theta series at |w| = {:.4}, |q| = {:.6} did not reach {} within {} term pairs",
        abs_w,
        abs_q,
        tol.target,
        tol.max_terms
    )))
}

/// Reduce z into the fundamental annulus and return (m, w, prefactor) with
/// Theta(z) = prefactor * Theta(w), prefactor = q^{m(m+1)/2} w^m.
fn theta_reduction(q: &QParameter, z: C64) -> Result<(i64, C64, C64)> {
    let d = annulus_decompose(q, z)?;
    let m = d.epsilon;
    let w = d.reduced;
    let half = (m * (m + 1)) / 2;
    let log_pref = q.q().ln() * C64::new(half as f64, 0.0) + w.ln() * C64::new(m as f64, 0.0);
    if log_pref.re.abs() > 700.0 {
        return Err(QError::NoConvergence(format!(
            "theta prefactor overflows at z = {z} ({m} annulus steps away)"
        )));
    }
    Ok((m, w, log_pref.exp()))
}

/// Theta_q(z), summed over the fundamental annulus after reduction by the
/// functional equation.
pub fn theta(q: &QParameter, z: C64, tol: &SeriesTolerance) -> Result<C64> {
    let (_, w, pref) = theta_reduction(q, z)?;
    let (t, _) = theta_pair_in_annulus(q, w, tol)?;
    Ok(pref * t)
}

/// Nearest point of the spiral q^Z * anchor to z, with its relative distance.
pub fn nearest_on_spiral(q: &QParameter, z: C64, anchor: C64) -> (f64, C64) {
    let y = (z.norm().ln() - anchor.norm().ln()) / q.ln_abs_q();
    let mut best = (f64::INFINITY, anchor);
    for k in [y.floor() as i64 - 1, y.floor() as i64, y.floor() as i64 + 1] {
        let p = q.pow_int(k) * anchor;
        let d = (z - p).norm() / z.norm();
        if d < best.0 {
            best = (d, p);
        }
    }
    best
}

fn guard_spiral(q: &QParameter, z: C64, anchor: C64, what: &str) -> Result<()> {
    let (d, p) = nearest_on_spiral(q, z, anchor);
    if d < 1e-8 {
        return Err(QError::PoleProximity { what: what.to_string(), near: p });
    }
    Ok(())
}

/// The q-logarithm l_q(z) = z Theta'(z) / Theta(z); satisfies
/// l_q(qz) = l_q(z) + 1. Poles sit on the zero spiral of Theta.
pub fn qlog(q: &QParameter, z: C64, tol: &SeriesTolerance) -> Result<C64> {
    qlog_on(q, z, tol, ThetaBranch::Standard)
}

/// The q-logarithm on a chosen theta branch: the negated variant is
/// -z Theta'(-z) / Theta(-z), with poles on +q^Z.
pub fn qlog_on(q: &QParameter, z: C64, tol: &SeriesTolerance, branch: ThetaBranch) -> Result<C64> {
    let (arg, pole_anchor) = match branch {
        ThetaBranch::Standard => (z, C64::new(-1.0, 0.0)),
        ThetaBranch::Negated => (-z, C64::new(1.0, 0.0)),
    };
    guard_spiral(q, z, pole_anchor, "q-logarithm")?;
    let (m, w, _) = theta_reduction(q, arg)?;
    let (t, dt) = theta_pair_in_annulus(q, w, tol)?;
    // l(q^m w) = l(w) + m, independent of the functional-equation sign.
    Ok(w * dt / t + C64::new(m as f64, 0.0))
}

/// The q-character e_{q,c}(z) = z^{eps(c)} Theta(z) / Theta(c_bar^{-1} z).
/// Satisfies e_{q,c}(qz) = c e_{q,c}(z) and e_{q,q^n} = z^n.
pub fn qchar(q: &QParameter, c: C64, z: C64, tol: &SeriesTolerance) -> Result<C64> {
    qchar_on(q, c, z, tol, ThetaBranch::Standard)
}

/// q-character on a chosen theta branch. The negated variant uses Theta(-z)
/// throughout (poles on +c_bar q^Z); the z^{eps(c)} factor keeps the plain
/// argument either way.
pub fn qchar_on(
    q: &QParameter,
    c: C64,
    z: C64,
    tol: &SeriesTolerance,
    branch: ThetaBranch,
) -> Result<C64> {
    if c.norm() == 0.0 {
        return Err(QError::Domain("q-character label c must lie in C*".into()));
    }
    let d = annulus_decompose(q, c)?;
    let pole_anchor = match branch {
        ThetaBranch::Standard => -d.reduced,
        ThetaBranch::Negated => d.reduced,
    };
    guard_spiral(q, z, pole_anchor, "q-character")?;
    let arg = match branch {
        ThetaBranch::Standard => z,
        ThetaBranch::Negated => -z,
    };
    let num = theta(q, arg, tol)?;
    let den = theta(q, arg / d.reduced, tol)?;
    let power = z.powi(d.epsilon as i32);
    Ok(power * num / den)
}

/// The scalar cocycle phi(c, d)(z) = e_{q,c}(z) e_{q,d}(z) / e_{q,cd}(z),
/// an elliptic function of z.
pub fn cocycle_phi(q: &QParameter, c: C64, d: C64, z: C64, tol: &SeriesTolerance) -> Result<C64> {
    let ec = qchar(q, c, z, tol)?;
    let ed = qchar(q, d, z, tol)?;
    let ecd = qchar(q, c * d, z, tol)?;
    Ok(ec * ed / ecd)
}

/// The twisting factor psi_a(c) = g_a(c) / e_{q,c}(a). Depends on c only
/// through its annulus reduction, and satisfies
/// psi_a(c1) psi_a(c2) phi(c1, c2)(a) = psi_a(c1 c2).
pub fn psi(q: &QParameter, a: C64, c: C64, tol: &SeriesTolerance) -> Result<C64> {
    let ga = CharacterSpec::g(q, a)?;
    let g_val = char_eval(q, &ga, c)?;
    let e_val = qchar(q, c, a, tol)?;
    if e_val.norm() == 0.0 {
        let (_, p) = nearest_on_spiral(q, a, C64::new(-1.0, 0.0));
        return Err(QError::PoleProximity { what: "psi twisting factor".into(), near: p });
    }
    Ok(g_val / e_val)
}

/// Where the standard special functions are singular: zeros of Theta sit on
/// -q^Z, so l_q has poles there and e_{q,c} has poles on -c_bar q^Z.
pub fn qchar_pole_anchor(q: &QParameter, c: C64) -> Result<C64> {
    Ok(-annulus_decompose(q, c)?.reduced)
}
