//! Base parameter and multiplicative structure of C*.
//!
//! Everything downstream depends on the choices made here: q = e^{-2i pi tau}
//! with Im(tau) > 0 (so |q| > 1), the fundamental annulus { 1 <= |c| < |q| },
//! the splitting z = u * q^y of C* into a unit factor and a real q-power, and
//! the two-parameter family of characters u * q^y -> u^alpha * e^{2i pi beta y}
//! that the local Galois groups are built from.

use crate::error::{QError, Result};
use crate::C64;
use std::f64::consts::PI;
use std::ops::Mul;

const TWO_PI: f64 = 2.0 * PI;

/// The base q = e^{-2i pi tau} of the difference operator, kept together with
/// its half-plane parameter tau.
///
/// Invariants: Im(tau) > 0, |q| > 1, and |e^{-2i pi tau} - q| <= 1e-12 * |q|.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QParameter {
    tau: C64,
    q: C64,
}

impl QParameter {
    /// Build from tau in the upper half plane; q is derived.
    pub fn from_tau(tau: C64) -> Result<Self> {
        if !(tau.im > 0.0) {
            return Err(QError::Domain(format!(
                "tau = {tau} must lie in the upper half plane"
            )));
        }
        let q = (-C64::i() * TWO_PI * tau).exp();
        Ok(QParameter { tau, q })
    }

    /// Build from q with |q| > 1; tau is the principal choice
    /// tau = ln(q) / (-2 i pi), which always has Im(tau) > 0.
    pub fn from_q(q: C64) -> Result<Self> {
        if !(q.norm() > 1.0) {
            return Err(QError::Domain(format!("|q| = {} must exceed 1", q.norm())));
        }
        let tau = q.ln() / (-C64::i() * TWO_PI);
        Ok(QParameter { tau, q })
    }

    pub fn tau(&self) -> C64 {
        self.tau
    }

    pub fn q(&self) -> C64 {
        self.q
    }

    /// ln |q| > 0, the scale of the annulus.
    pub fn ln_abs_q(&self) -> f64 {
        self.q.norm().ln()
    }

    /// q^w = e^{-2 i pi tau w} for a complex exponent w.
    pub fn pow(&self, w: C64) -> C64 {
        (-C64::i() * TWO_PI * self.tau * w).exp()
    }

    /// q^y for a real exponent y.
    pub fn pow_real(&self, y: f64) -> C64 {
        self.pow(C64::new(y, 0.0))
    }

    /// q^k for an integer exponent, computed in log space so that large |k|
    /// stay accurate.
    pub fn pow_int(&self, k: i64) -> C64 {
        let lq = self.q.ln();
        (lq * C64::new(k as f64, 0.0)).exp()
    }

    /// Relative distance from z to the discrete spiral q^Z * anchor,
    /// min over k of |z - q^k * anchor| / |z|.
    pub fn spiral_distance(&self, z: C64, anchor: C64) -> f64 {
        if z.norm() == 0.0 || anchor.norm() == 0.0 {
            return f64::INFINITY;
        }
        let y = (z.norm().ln() - anchor.norm().ln()) / self.ln_abs_q();
        let mut best = f64::INFINITY;
        // Only spiral points with |q^k anchor| within a factor of |q| of |z|
        // can be the closest; check the three nearest levels.
        for k in [y.floor() as i64 - 1, y.floor() as i64, y.floor() as i64 + 1] {
            let p = self.pow_int(k) * anchor;
            let d = (z - p).norm() / z.norm();
            if d < best {
                best = d;
            }
        }
        best
    }
}

/// c = q^epsilon * reduced with the reduced part in the fundamental annulus
/// 1 <= |reduced| < |q|.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnulusDecomposition {
    pub epsilon: i64,
    pub reduced: C64,
}

/// Write c = q^epsilon * c_bar with 1 <= |c_bar| < |q|.
pub fn annulus_decompose(q: &QParameter, c: C64) -> Result<AnnulusDecomposition> {
    if c.norm() == 0.0 || !c.is_finite() {
        return Err(QError::Domain(format!(
            "annulus decomposition needs c in C*, got {c}"
        )));
    }
    let y = c.norm().ln() / q.ln_abs_q();
    // Snap to the nearest integer level when |c| is numerically an exact
    // power of |q|, so that boundary points land on epsilon with |c_bar| = 1.
    let rounded = y.round();
    let mut epsilon = if (y - rounded).abs() < 1e-12 * rounded.abs().max(1.0) {
        rounded as i64
    } else {
        y.floor() as i64
    };
    let mut reduced = c * q.pow_int(-epsilon);
    // Rounding can leave |reduced| a hair outside [1, |q|); correct by one step.
    while reduced.norm() < 1.0 {
        epsilon -= 1;
        reduced *= q.q();
    }
    while reduced.norm() >= q.q().norm() {
        epsilon += 1;
        reduced /= q.q();
    }
    Ok(AnnulusDecomposition { epsilon, reduced })
}

/// z = unit * q^level with |unit| = 1 and level real.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CStarSplit {
    pub unit: C64,
    pub level: f64,
}

/// Split z in C* as unit * q^level, |unit| = 1, level = ln|z| / ln|q|.
pub fn split(q: &QParameter, z: C64) -> Result<CStarSplit> {
    if z.norm() == 0.0 || !z.is_finite() {
        return Err(QError::Domain(format!("splitting needs z in C*, got {z}")));
    }
    let level = z.norm().ln() / q.ln_abs_q();
    let mut unit = z * q.pow_real(-level);
    // |unit| is 1 up to rounding; renormalize so integer powers stay stable.
    unit /= C64::new(unit.norm(), 0.0);
    Ok(CStarSplit { unit, level })
}

/// The q-spiral logarithm: log_q(z) = level - x_r / tau where
/// unit = e^{2 i pi x_r} with x_r in [0, 1).
///
/// Satisfies q^{log_q z} = z and log_q(q a) = log_q(a) + 1 exactly; the
/// branch jump sits on the spiral q^R itself.
pub fn log_q(q: &QParameter, z: C64) -> Result<C64> {
    let s = split(q, z)?;
    let mut x_r = s.unit.arg() / TWO_PI;
    if x_r < 0.0 {
        x_r += 1.0;
    }
    // arg can return exactly -0.0 or values rounding x_r up to 1.0.
    if x_r >= 1.0 {
        x_r -= 1.0;
    }
    Ok(C64::new(s.level, 0.0) - C64::new(x_r, 0.0) / q.tau())
}

/// A character of C* determined by u * q^y -> u^alpha * e^{2 i pi beta y}.
///
/// alpha must be an integer for the unit factor to be single valued; beta is
/// an arbitrary complex number. The value at q is e^{2 i pi beta}, so group
/// elements (trivial on q) are exactly those with integer beta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacterSpec {
    pub alpha: i64,
    pub beta: C64,
}

impl CharacterSpec {
    pub fn new(alpha: i64, beta: C64) -> Self {
        CharacterSpec { alpha, beta }
    }

    /// gamma_1: u q^y -> u.
    pub fn gamma1() -> Self {
        CharacterSpec::new(1, C64::new(0.0, 0.0))
    }

    /// gamma_2: u q^y -> e^{2 i pi y}.
    pub fn gamma2() -> Self {
        CharacterSpec::new(0, C64::new(1.0, 0.0))
    }

    /// gamma_2^b: u q^y -> e^{2 i pi b y}.
    pub fn gamma2_pow(b: C64) -> Self {
        CharacterSpec::new(0, b)
    }

    /// delta_alpha: u q^y -> q^{alpha y}, i.e. beta = -tau * alpha.
    pub fn delta(q: &QParameter, alpha: C64) -> Self {
        CharacterSpec::new(0, -q.tau() * alpha)
    }

    /// g_a = delta_{log_q(a)}, the character with g_a(q) = a.
    pub fn g(q: &QParameter, a: C64) -> Result<Self> {
        Ok(CharacterSpec::delta(q, log_q(q, a)?))
    }

    /// The identity character.
    pub fn identity() -> Self {
        CharacterSpec::new(0, C64::new(0.0, 0.0))
    }

    /// The inverse character.
    pub fn inverse(&self) -> Self {
        CharacterSpec::new(-self.alpha, -self.beta)
    }

    /// Value at q: e^{2 i pi beta}.
    pub fn value_at_q(&self) -> C64 {
        (C64::i() * TWO_PI * self.beta).exp()
    }

    /// Whether the character kills q (so it descends to the elliptic curve
    /// C* / q^Z and acts on local Galois data as a group element).
    pub fn is_group_element(&self, tol: f64) -> bool {
        (self.value_at_q() - C64::new(1.0, 0.0)).norm() <= tol
    }
}

impl Mul for CharacterSpec {
    type Output = CharacterSpec;

    fn mul(self, rhs: CharacterSpec) -> CharacterSpec {
        CharacterSpec::new(self.alpha + rhs.alpha, self.beta + rhs.beta)
    }
}

/// Evaluate a character at z in C*.
pub fn char_eval(q: &QParameter, spec: &CharacterSpec, z: C64) -> Result<C64> {
    let s = split(q, z)?;
    let unit_part = s.unit.powi(spec.alpha as i32);
    let level_part = (C64::i() * TWO_PI * spec.beta * C64::new(s.level, 0.0)).exp();
    Ok(unit_part * level_part)
}

/// The groupoid connector g_{b,c} = g_{c/b}: the canonical character whose
/// value at q is c/b, transporting fiber data at b to fiber data at c.
pub fn groupoid_connector(q: &QParameter, b: C64, c: C64) -> Result<CharacterSpec> {
    if b.norm() == 0.0 || c.norm() == 0.0 {
        return Err(QError::Domain(format!(
            "groupoid connector needs b, c in C*, got b = {b}, c = {c}"
        )));
    }
    CharacterSpec::g(q, c / b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn q_real(v: f64) -> QParameter {
        QParameter::from_q(c(v, 0.0)).unwrap()
    }

    #[test]
    fn tau_and_q_are_consistent() {
        let q = QParameter::from_tau(c(0.1, 0.3)).unwrap();
        let back = (-C64::i() * TWO_PI * q.tau()).exp();
        assert!((back - q.q()).norm() <= 1e-12 * q.q().norm());
        assert!(q.q().norm() > 1.0);

        let q2 = QParameter::from_q(c(3.0, 1.0)).unwrap();
        assert!(q2.tau().im > 0.0);
        assert!((q2.pow_real(1.0) - q2.q()).norm() < 1e-12 * q2.q().norm());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(QParameter::from_q(c(0.5, 0.0)).is_err());
        assert!(QParameter::from_q(c(1.0, 0.0)).is_err());
        assert!(QParameter::from_tau(c(0.3, -0.2)).is_err());
        assert!(annulus_decompose(&q_real(2.0), c(0.0, 0.0)).is_err());
        assert!(split(&q_real(2.0), c(0.0, 0.0)).is_err());
    }

    #[test]
    fn annulus_decompose_known_values() {
        let q = q_real(2.0);
        let d = annulus_decompose(&q, c(12.0, 0.0)).unwrap();
        assert_eq!(d.epsilon, 3);
        assert!((d.reduced - c(1.5, 0.0)).norm() < 1e-12);

        let d = annulus_decompose(&q, c(0.3, 0.0)).unwrap();
        assert_eq!(d.epsilon, -2);
        assert!((d.reduced - c(1.2, 0.0)).norm() < 1e-12);

        let d = annulus_decompose(&q, c(1.0, 0.0)).unwrap();
        assert_eq!(d.epsilon, 0);
        assert!((d.reduced - c(1.0, 0.0)).norm() < 1e-12);

        // Exact powers of q land on |reduced| = 1.
        for n in -3i64..=3 {
            let d = annulus_decompose(&q, q.pow_int(n)).unwrap();
            assert_eq!(d.epsilon, n);
            assert!((d.reduced - c(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn annulus_decompose_random_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &qv in &[1.5, 4.0, 10.0] {
            let q = q_real(qv);
            for _ in 0..200 {
                let z = c(rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0));
                if z.norm() < 1e-3 {
                    continue;
                }
                let d = annulus_decompose(&q, z).unwrap();
                assert!(d.reduced.norm() >= 1.0 && d.reduced.norm() < qv);
                let back = q.pow_int(d.epsilon) * d.reduced;
                assert!((back - z).norm() <= 1e-12 * z.norm());
            }
        }
    }

    #[test]
    fn split_known_values_and_invariant() {
        let q = q_real(4.0);
        let s = split(&q, c(2.0, 0.0)).unwrap();
        assert!((s.unit - c(1.0, 0.0)).norm() < 1e-12);
        assert!((s.level - 0.5).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q2 = QParameter::from_tau(c(0.13, 0.21)).unwrap();
        for _ in 0..200 {
            let z = c(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            if z.norm() < 1e-3 {
                continue;
            }
            for qq in [&q, &q2] {
                let s = split(qq, z).unwrap();
                assert!((s.unit.norm() - 1.0).abs() < 1e-12);
                let back = s.unit * qq.pow_real(s.level);
                assert!((back - z).norm() <= 1e-12 * z.norm());
            }
        }
    }

    #[test]
    fn log_q_is_a_right_inverse_of_q_pow() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for qq in [
            q_real(2.0),
            q_real(4.0),
            QParameter::from_tau(c(0.07, 0.26)).unwrap(),
        ] {
            for _ in 0..100 {
                let z = c(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
                if z.norm() < 1e-3 {
                    continue;
                }
                let l = log_q(&qq, z).unwrap();
                assert!((qq.pow(l) - z).norm() <= 1e-10 * z.norm());
                // Shift law, exact by construction: same unit factor.
                let l_shift = log_q(&qq, qq.q() * z).unwrap();
                assert!((l_shift - l - c(1.0, 0.0)).norm() < 1e-10);
            }
        }
        // On the spiral q^R the logarithm is the plain level.
        let q = q_real(4.0);
        assert!((log_q(&q, c(2.0, 0.0)).unwrap() - c(0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn char_eval_known_values() {
        let q = q_real(4.0);
        let z = c(2.0, 0.0);
        let g1 = char_eval(&q, &CharacterSpec::gamma1(), z).unwrap();
        let g2 = char_eval(&q, &CharacterSpec::gamma2(), z).unwrap();
        assert!((g1 - c(1.0, 0.0)).norm() < 1e-12);
        assert!((g2 - c(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn characters_are_homomorphisms() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let q = QParameter::from_tau(c(0.05, 0.22)).unwrap();
        let specs = [
            CharacterSpec::gamma1(),
            CharacterSpec::gamma2(),
            CharacterSpec::new(2, c(0.7, -0.3)),
            CharacterSpec::delta(&q, c(1.4, 0.2)),
        ];
        for _ in 0..100 {
            let z1 = c(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
            let z2 = c(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
            if z1.norm() < 1e-2 || z2.norm() < 1e-2 {
                continue;
            }
            for spec in &specs {
                let lhs = char_eval(&q, spec, z1 * z2).unwrap();
                let rhs =
                    char_eval(&q, spec, z1).unwrap() * char_eval(&q, spec, z2).unwrap();
                assert!(
                    (lhs - rhs).norm() < 1e-10 * rhs.norm().max(1.0),
                    "homomorphism failure for {spec:?} at {z1}, {z2}"
                );
            }
        }
    }

    #[test]
    fn gamma1_times_gamma2_to_minus_tau_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for qq in [q_real(4.0), QParameter::from_tau(c(0.11, 0.19)).unwrap()] {
            let spec = CharacterSpec::gamma1()
                * CharacterSpec::gamma2_pow(-qq.tau());
            for _ in 0..100 {
                let z = c(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
                if z.norm() < 1e-2 {
                    continue;
                }
                let v = char_eval(&qq, &spec, z).unwrap();
                assert!((v - z).norm() <= 1e-10 * z.norm());
            }
        }
    }

    #[test]
    fn joint_kernel_is_q_to_z() {
        // Structured sample z = u q^y: both characters are trivial only when
        // u = 1 and y is an integer, i.e. z lies on q^Z.
        let q = q_real(3.0);
        let one = c(1.0, 0.0);
        for iu in 0..12 {
            let u = (C64::i() * TWO_PI * (iu as f64 / 12.0)).exp();
            for iy in -6..=6 {
                for fy in [0.0, 0.25, 0.5, 0.75] {
                    let y = iy as f64 + fy;
                    let z = u * q.pow_real(y);
                    let g1 = char_eval(&q, &CharacterSpec::gamma1(), z).unwrap();
                    let g2 = char_eval(&q, &CharacterSpec::gamma2(), z).unwrap();
                    if (g1 - one).norm() < 1e-10 && (g2 - one).norm() < 1e-10 {
                        assert!(
                            q.spiral_distance(z, one) < 1e-8,
                            "joint kernel point {z} not on q^Z"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn g_character_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let q = QParameter::from_tau(c(0.09, 0.24)).unwrap();
        for _ in 0..50 {
            let a = c(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
            if a.norm() < 1e-2 {
                continue;
            }
            let ga = CharacterSpec::g(&q, a).unwrap();
            // g_a(q) = a.
            assert!((ga.value_at_q() - a).norm() <= 1e-10 * a.norm());
            // g_{qa} / g_a = delta_1 pointwise.
            let gqa = CharacterSpec::g(&q, q.q() * a).unwrap();
            let delta1 = CharacterSpec::delta(&q, c(1.0, 0.0));
            for _ in 0..5 {
                let z = c(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
                if z.norm() < 1e-2 {
                    continue;
                }
                let lhs = char_eval(&q, &gqa, z).unwrap() / char_eval(&q, &ga, z).unwrap();
                let rhs = char_eval(&q, &delta1, z).unwrap();
                assert!((lhs - rhs).norm() <= 1e-10 * rhs.norm());
            }
        }
    }

    #[test]
    fn groupoid_connector_transports() {
        let q = q_real(4.0);
        let b = c(1.3, 0.4);
        let cc = c(-0.8, 2.1);
        let g = groupoid_connector(&q, b, cc).unwrap();
        assert!((g.value_at_q() * b - cc).norm() <= 1e-10 * cc.norm());
        assert!(groupoid_connector(&q, c(0.0, 0.0), cc).is_err());
    }
}
