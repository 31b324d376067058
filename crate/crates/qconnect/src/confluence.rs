//! Degeneration of q-difference data onto differential data as q -> 1.
//!
//! A confluent family deforms the identity along a fixed rational matrix:
//! A_eps = I + (q0^eps - 1) Btilde(z) with q_eps = q0^eps, so that
//! (sigma_q - 1)/(q_eps - 1) applied to a solution tends to the Euler
//! derivative z d/dz against Btilde. The module quantifies four limits as
//! error scans over a decreasing eps list:
//!
//! - q-characters against the power branch: |e_{q_eps, q_eps^gamma}(z) - z^gamma|,
//! - the scaled q-logarithm against log z: |(q_eps - 1) l_{q_eps}(z) - log z|,
//! - powers of the local Galois generators against the differential
//!   monodromy e^{2 i pi Btilde(0)},
//! - connection matrices against their locally constant limit, which is flat
//!   within a slice of C* cut along the rays through the singularities and
//!   jumps across those rays.
//!
//! Both scans of special functions use the symmetric normalizations
//! l(z) = l_q(q^{-1/2} z) and e(q,c,z) = z^{eps(c)} Theta(q^{-1/2}z) /
//! Theta(q^{-1/2}z/c_bar), the ones whose limits land on the principal
//! branch (and for which the scaled q-logarithm vanishes at z = 1 exactly,
//! by symmetry of the theta weights about the shifted point).
//!
//! Near q = 1 the theta series and product both drown in f64 noise away from
//! the positive real axis: the function is exponentially small there while
//! individual terms stay O(1). Every scan evaluation therefore goes through
//! Poisson resummation, Theta_q(e^{2 i pi x}) = e^{eta/8} sqrt(2 pi/eta)
//! e^{i pi x} sum_m (-1)^m exp(-2 pi^2 (x-m)^2 / eta) with eta = ln q, which
//! converges in a handful of Gaussian terms precisely where the series route
//! gives out. The tests pin the resummed values against the series route at
//! moderate eps before relying on them below it.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{QError, Result};
use crate::matfun::dunford;
use crate::qcore::{annulus_decompose, char_eval, CharacterSpec, QParameter};
use crate::ratsys::{BasePoint, RationalMatrix, RationalMatrixSystem};
use crate::{C64, CMatrix};

const TWO_PI: f64 = 2.0 * PI;

/// How a family member is assembled from (q_eps, Btilde). The canonical
/// builder returns I + (q_eps - 1) Btilde; a custom one may shape the entries
/// differently but must keep (A_eps - I)/(q_eps - 1) -> Btilde, which
/// `family_defect` measures.
type Builder = dyn Fn(&QParameter, &RationalMatrix) -> Result<RationalMatrixSystem> + Send + Sync;

/// The family A_eps = I + (q0^eps - 1) Btilde(z), q_eps = q0^eps.
#[derive(Clone)]
pub struct ConfluentFamily {
    q0: QParameter,
    btilde: RationalMatrix,
    builder: Option<Arc<Builder>>,
}

impl fmt::Debug for ConfluentFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConfluentFamily")
            .field("q0", &self.q0)
            .field("dim", &self.btilde.dim())
            .field("custom_builder", &self.builder.is_some())
            .finish()
    }
}

impl ConfluentFamily {
    pub fn new(q0: QParameter, btilde: RationalMatrix) -> Self {
        ConfluentFamily { q0, btilde, builder: None }
    }

    /// Same family data under a custom member builder.
    pub fn with_builder<F>(q0: QParameter, btilde: RationalMatrix, builder: F) -> Self
    where
        F: Fn(&QParameter, &RationalMatrix) -> Result<RationalMatrixSystem> + Send + Sync + 'static,
    {
        ConfluentFamily { q0, btilde, builder: Some(Arc::new(builder)) }
    }

    pub fn q0(&self) -> &QParameter {
        &self.q0
    }

    pub fn btilde(&self) -> &RationalMatrix {
        &self.btilde
    }

    pub fn dim(&self) -> usize {
        self.btilde.dim()
    }

    /// q_eps = q0^eps through the tau parametrization, exact in log space.
    pub fn q_eps(&self, eps: f64) -> Result<QParameter> {
        check_eps(eps)?;
        QParameter::from_tau(self.q0.tau() * C64::new(eps, 0.0))
    }

    /// The family member at eps.
    pub fn system(&self, eps: f64) -> Result<RationalMatrixSystem> {
        let q = self.q_eps(eps)?;
        match &self.builder {
            Some(b) => b(&q, &self.btilde),
            None => canonical_member(&q, &self.btilde),
        }
    }

    /// Sampled deviation of (A_eps - I)/(q_eps - 1) from Btilde, the family
    /// invariant every builder must keep. Zero up to rounding for the
    /// canonical builder.
    pub fn family_defect(&self, eps: f64) -> Result<f64> {
        let q = self.q_eps(eps)?;
        let sys = self.system(eps)?;
        let qm1 = q.q() - C64::new(1.0, 0.0);
        let samples = [
            C64::new(0.37, 0.11),
            C64::new(-0.52, 0.64),
            C64::new(1.13, -0.37),
            C64::new(0.21, -0.88),
            C64::new(-0.95, -0.23),
            C64::new(1.61, 0.42),
        ];
        let mut worst = 0.0f64;
        let mut used = 0usize;
        let n = self.dim();
        for z in samples {
            let (a, b) = match (sys.matrix().eval(z), self.btilde.eval(z)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => continue, // sample sits on a pole of the data
            };
            let dev = ((a - CMatrix::identity(n, n)) * (C64::new(1.0, 0.0) / qm1) - b).norm();
            worst = worst.max(dev);
            used += 1;
        }
        if used < 3 {
            return Err(QError::Contract(
                "family defect sampling hit poles at nearly every probe point".into(),
            ));
        }
        Ok(worst)
    }
}

fn canonical_member(q: &QParameter, btilde: &RationalMatrix) -> Result<RationalMatrixSystem> {
    let qm1 = q.q() - C64::new(1.0, 0.0);
    let n = btilde.dim();
    let mut m = RationalMatrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            let shifted = btilde.entry(i, j).scale(qm1);
            let e = if i == j { shifted.add(&crate::ratsys::RationalFunction::one())? } else { shifted };
            m.set_entry(i, j, e);
        }
    }
    RationalMatrixSystem::new(q.clone(), m)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(QError::Domain(format!(
            "confluence parameter eps = {eps} must lie in (0, 1]"
        )));
    }
    Ok(())
}

/// The default scan grid eps = 2^-k, k = 2..7.
pub fn default_eps_list() -> Vec<f64> {
    (2..=7).map(|k| 0.5f64.powi(k)).collect()
}

/// Characters of the differential limit, acting on an exponent split
/// x' = u'/tau0 + v' of z' = e^{2 i pi x'} with u', v' real.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TildeCharacterSpec {
    /// gamma1-tilde^w: z' = e^{2 i pi x'} maps to e^{2 i pi w u'}.
    Gamma1 { weight: C64 },
    /// gamma2-tilde: z' maps to e^{2 i pi v'}.
    Gamma2,
}

impl TildeCharacterSpec {
    pub fn gamma1() -> Self {
        TildeCharacterSpec::Gamma1 { weight: C64::new(1.0, 0.0) }
    }

    pub fn gamma1_pow(weight: C64) -> Self {
        TildeCharacterSpec::Gamma1 { weight }
    }

    pub fn gamma2() -> Self {
        TildeCharacterSpec::Gamma2
    }

    /// Evaluate on z' in C*. The split is u' = Im x'/Im(1/tau0),
    /// v' = Re x' - u' Re(1/tau0), with x' the principal exponent; shifting
    /// x' by an integer moves v' by that integer and fixes u', so the value
    /// is branch independent.
    pub fn eval(&self, tau0: C64, zp: C64) -> Result<C64> {
        if zp.norm() == 0.0 {
            return Err(QError::Domain("tilde character argument must lie in C*".into()));
        }
        let inv_tau = C64::new(1.0, 0.0) / tau0;
        if !inv_tau.im.is_finite() || inv_tau.im.abs() < 1e-14 {
            return Err(QError::Domain(format!(
                "tau0 = {tau0} is real; the exponent split degenerates"
            )));
        }
        let xp = zp.ln() / C64::new(0.0, TWO_PI);
        let up = xp.im / inv_tau.im;
        let vp = xp.re - up * inv_tau.re;
        let val = match self {
            TildeCharacterSpec::Gamma1 { weight } => {
                (C64::new(0.0, TWO_PI) * *weight * C64::new(up, 0.0)).exp()
            }
            TildeCharacterSpec::Gamma2 => (C64::new(0.0, TWO_PI * vp)).exp(),
        };
        Ok(val)
    }
}

// ---------------------------------------------------------------------------
// Poisson-resummed evaluation of Theta and l_q near q = 1.

/// Principal exponent: z = e^{2 i pi x}.
pub(crate) fn x_of(z: C64) -> C64 {
    C64::new(z.arg() / TWO_PI, -z.norm().ln() / TWO_PI)
}

/// Normalized alternating Gaussian sums about m0 = round(Re x):
/// sigma = sum_m (-1)^{m-m0} exp(-w [(x-m)^2 - (x-m0)^2]) and the first
/// moment weighted by (x - m), with w = 2 pi^2 / eta. Factoring out the
/// dominant Gaussian keeps every term at most ~1, so neither sum can
/// overflow however small eta gets.
fn poisson_sums(eta: C64, x: C64) -> (C64, C64) {
    let m0 = x.re.round() as i64;
    let w = C64::new(2.0 * PI * PI, 0.0) / eta;
    let x0 = x - C64::new(m0 as f64, 0.0);
    let base = x0 * x0;
    let mut sigma = C64::new(1.0, 0.0);
    let mut moment = x0;
    for d in 1..=64i64 {
        let sign = if d % 2 == 1 { -1.0 } else { 1.0 };
        let mut largest = 0.0f64;
        for m in [m0 - d, m0 + d] {
            let xm = x - C64::new(m as f64, 0.0);
            let term = (-(w * (xm * xm - base))).exp() * C64::new(sign, 0.0);
            sigma += term;
            moment += term * xm;
            largest = largest.max(term.norm());
        }
        if largest < 1e-18 {
            break;
        }
    }
    (sigma, moment)
}

/// l_q(z) = z Theta'(z)/Theta(z) at z = e^{2 i pi x}: differentiating the
/// resummed form gives 1/2 + (2 i pi / eta) moment/sigma.
pub(crate) fn lq_poisson(eta: C64, x: C64) -> Result<C64> {
    let (sigma, moment) = poisson_sums(eta, x);
    if sigma.norm() < 1e-10 {
        return Err(QError::PoleProximity {
            what: "resummed q-logarithm denominator".into(),
            near: (C64::new(0.0, TWO_PI) * x).exp(),
        });
    }
    Ok(C64::new(0.5, 0.0) + (C64::new(0.0, TWO_PI) / eta) * moment / sigma)
}

/// Theta_q(e^{2 i pi x}) by Poisson resummation. Only sound while the
/// leading Gaussian stays within f64 range; the scans keep |Im x| small.
pub(crate) fn theta_poisson(eta: C64, x: C64) -> C64 {
    let (sigma, _) = poisson_sums(eta, x);
    let m0 = x.re.round() as i64;
    let x0 = x - C64::new(m0 as f64, 0.0);
    let w = C64::new(2.0 * PI * PI, 0.0) / eta;
    let sign = if m0.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    (eta / C64::new(8.0, 0.0)).exp()
        * (C64::new(TWO_PI, 0.0) / eta).sqrt()
        * (C64::new(0.0, PI) * x).exp()
        * C64::new(sign, 0.0)
        * (-(w * x0 * x0)).exp()
        * sigma
}

/// Theta(e^{2 i pi xa}) / Theta(e^{2 i pi xb}) with the common prefactors
/// cancelled, so exponentially small values never materialize.
fn theta_ratio_poisson(eta: C64, xa: C64, xb: C64) -> Result<C64> {
    let (sa, _) = poisson_sums(eta, xa);
    let (sb, _) = poisson_sums(eta, xb);
    if sb.norm() < 1e-10 {
        return Err(QError::PoleProximity {
            what: "resummed theta ratio denominator".into(),
            near: (C64::new(0.0, TWO_PI) * xb).exp(),
        });
    }
    let ma = xa.re.round() as i64;
    let mb = xb.re.round() as i64;
    let xa0 = xa - C64::new(ma as f64, 0.0);
    let xb0 = xb - C64::new(mb as f64, 0.0);
    let w = C64::new(2.0 * PI * PI, 0.0) / eta;
    let sign = if (ma - mb).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    Ok((C64::new(0.0, PI) * (xa - xb)).exp()
        * C64::new(sign, 0.0)
        * (-(w * (xa0 * xa0 - xb0 * xb0))).exp()
        * sa
        / sb)
}

/// The symmetric character e(q,c,z) = z^{eps(c)} Theta(q^{-1/2}z) /
/// Theta(q^{-1/2}z/c_bar), resummed. Exact on c = q^n and multiplicative
/// under z -> qz with factor c, like the plain q-character.
pub(crate) fn qchar_symmetric(q: &QParameter, c: C64, z: C64) -> Result<C64> {
    if c.norm() == 0.0 {
        return Err(QError::Domain("character label c must lie in C*".into()));
    }
    let eta = q.q().ln();
    let dec = annulus_decompose(q, c)?;
    let shifted = (-eta / C64::new(2.0, 0.0)).exp() * z;
    let ratio = theta_ratio_poisson(eta, x_of(shifted), x_of(shifted / dec.reduced))?;
    Ok(z.powi(dec.epsilon as i32) * ratio)
}

/// The symmetric q-logarithm l(z) = l_q(q^{-1/2} z), resummed.
pub(crate) fn qlog_symmetric(q: &QParameter, z: C64) -> Result<C64> {
    let eta = q.q().ln();
    let shifted = (-eta / C64::new(2.0, 0.0)).exp() * z;
    lq_poisson(eta, x_of(shifted))
}

/// e(q, q^gamma, z) with the annulus level read off gamma itself rather
/// than off |q^gamma|: at integer gamma the reduced label collapses to
/// exactly 1, keeping the scan exact there instead of hostage to a rounding
/// ulp at the annulus boundary.
fn qchar_for_exponent(q: &QParameter, gamma: C64, z: C64) -> Result<C64> {
    let eta = q.q().ln();
    let y = (gamma * eta).re / q.ln_abs_q();
    let rounded = y.round();
    let epsilon = if (y - rounded).abs() < 1e-12 * rounded.abs().max(1.0) {
        rounded as i64
    } else {
        y.floor() as i64
    };
    let reduced = q.pow(gamma - C64::new(epsilon as f64, 0.0));
    let shifted = (-eta / C64::new(2.0, 0.0)).exp() * z;
    let ratio = theta_ratio_poisson(eta, x_of(shifted), x_of(shifted / reduced))?;
    Ok(z.powi(epsilon as i32) * ratio)
}

// ---------------------------------------------------------------------------
// Branch and cut bookkeeping.

/// The branch exponent x = u + v tau0 with u in (-1/2, 1/2], v real, fixed by
/// |q0^{-v}| = |z|. The limits of the scans land on log z = 2 i pi x.
fn branch_exponent(q0: &QParameter, z: C64) -> C64 {
    let v = -z.norm().ln() / q0.q().norm().ln();
    let unit = z * (q0.q().ln() * C64::new(v, 0.0)).exp();
    C64::new(unit.arg() / TWO_PI, 0.0) + C64::new(v, 0.0) * q0.tau()
}

/// Refuse points on the cut -q0^R, where the limit functions jump and the
/// resummed denominators vanish as eps -> 0.
fn guard_cut(q0: &QParameter, z: C64) -> Result<()> {
    if z.norm() == 0.0 {
        return Err(QError::Domain("scan point must lie in C*".into()));
    }
    let t = z.norm().ln() / q0.q().norm().ln();
    let ray_point = -(q0.q().ln() * C64::new(t, 0.0)).exp();
    if (z - ray_point).norm() <= 1e-6 * z.norm() {
        return Err(QError::Domain(format!(
            "scan point {z} lies on the confluence cut -q0^R"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Scans.

/// Errors |e_{q_eps, q_eps^gamma}(z) - z^gamma| over the eps list, with
/// z^gamma taken on the branch log z = 2 i pi (u + v tau0), u in (-1/2, 1/2].
pub fn char_limit_scan(
    q0: &QParameter,
    gamma: C64,
    z: C64,
    eps_list: &[f64],
) -> Result<Vec<f64>> {
    guard_cut(q0, z)?;
    let target = (gamma * C64::new(0.0, TWO_PI) * branch_exponent(q0, z)).exp();
    let mut errors = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        check_eps(eps)?;
        let q = QParameter::from_tau(q0.tau() * C64::new(eps, 0.0))?;
        errors.push((qchar_for_exponent(&q, gamma, z)? - target).norm());
    }
    Ok(errors)
}

/// Errors |(q_eps - 1) l_{q_eps}(z) - log z| over the eps list, same branch.
/// At z = 1 every entry vanishes to rounding: the symmetric weights cancel
/// the moment sum exactly.
pub fn log_limit_scan(q0: &QParameter, z: C64, eps_list: &[f64]) -> Result<Vec<f64>> {
    guard_cut(q0, z)?;
    let target = C64::new(0.0, TWO_PI) * branch_exponent(q0, z);
    let mut errors = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        check_eps(eps)?;
        let q = QParameter::from_tau(q0.tau() * C64::new(eps, 0.0))?;
        let scaled = (q.q() - C64::new(1.0, 0.0)) * qlog_symmetric(&q, z)?;
        errors.push((scaled - target).norm());
    }
    Ok(errors)
}

/// Matrix exponential by scaling and squaring a short Taylor sum; the inputs
/// here are small fixed matrices, so 20 terms at norm <= 1/4 is plenty.
fn exp_matrix(m: &CMatrix) -> CMatrix {
    let n = m.nrows();
    let scalings = (m.norm() / 0.25).log2().ceil().max(0.0) as u32;
    let a = m * C64::new(2f64.powi(-(scalings as i32)), 0.0);
    let mut term = CMatrix::identity(n, n);
    let mut sum = CMatrix::identity(n, n);
    for k in 1..=20 {
        term = (&term * &a) * C64::new(1.0 / k as f64, 0.0);
        sum += &term;
    }
    let mut out = sum;
    for _ in 0..scalings {
        out = &out * &out;
    }
    out
}

/// Errors of the local generators against the differential monodromy
/// e^{2 i pi Btilde(0)}: per eps, gamma1 applied to the semisimple part of
/// A_eps(0) and raised to the power floor(1/eps) against gamma1-tilde of the
/// monodromy, and gamma2 applied likewise against gamma2-tilde. Returns
/// (gamma1 errors, gamma2 errors).
///
/// gamma1 lands on the weight -1 member: under q = e^{-2 i pi tau} the unit
/// part of q^b winds opposite to the u' component of the exponent split, so
/// gamma1(A_s)^{floor(1/eps)} -> gamma1-tilde^{-1}(e^{2 i pi Btilde(0)}).
pub fn local_gen_limit(family: &ConfluentFamily, eps_list: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let b0 = family.btilde().at_zero().ok_or_else(|| {
        QError::Domain("Btilde has a pole at 0; the local generator limit needs Btilde(0)".into())
    })?;
    let tau0 = family.q0().tau();
    let monodromy = exp_matrix(&(&b0 * C64::new(0.0, TWO_PI)));
    let dun_lim = dunford(&monodromy)?;

    // Non-resonance on the differential side: no two eigenvalues of
    // Btilde(0) may differ by a nonzero integer, or e^{2 i pi Btilde(0)}
    // collapses distinct exponents.
    let (_, t) = b0.clone().schur().unpack();
    let eigs: Vec<C64> = t.diagonal().iter().copied().collect();
    for (i, li) in eigs.iter().enumerate() {
        for lj in eigs.iter().skip(i + 1) {
            let d = li - lj;
            let k = d.re.round();
            if k != 0.0 && (d - C64::new(k, 0.0)).norm() < 1e-9 {
                return Err(QError::Domain(format!(
                    "Btilde(0) eigenvalues differ by the nonzero integer {k}; resonant limit"
                )));
            }
        }
    }

    let g1_lim = dun_lim.apply_scalar(|mu| {
        TildeCharacterSpec::gamma1_pow(C64::new(-1.0, 0.0)).eval(tau0, mu)
    })?;
    let g2_lim = dun_lim.apply_scalar(|mu| TildeCharacterSpec::gamma2().eval(tau0, mu))?;

    let n = b0.nrows();
    let mut g1_errors = Vec::with_capacity(eps_list.len());
    let mut g2_errors = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        check_eps(eps)?;
        let q = family.q_eps(eps)?;
        let a0 = CMatrix::identity(n, n) + &b0 * (q.q() - C64::new(1.0, 0.0));
        let dun = dunford(&a0)?;
        let g1 = dun.apply_scalar(|lam| char_eval(&q, &CharacterSpec::gamma1(), lam))?;
        let g2 = dun.apply_scalar(|lam| char_eval(&q, &CharacterSpec::gamma2(), lam))?;
        let mut powered = CMatrix::identity(n, n);
        for _ in 0..(1.0 / eps).floor() as usize {
            powered = &powered * &g1;
        }
        g1_errors.push((&powered - &g1_lim).norm());
        g2_errors.push((&g2 - &g2_lim).norm());
    }
    Ok((g1_errors, g2_errors))
}

/// One scan measurement: the error of a probe at one eps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow {
    pub eps: f64,
    pub probe: usize,
    pub error: f64,
}

/// Render rows as a CSV table with the columns eps, probe, error.
pub fn rows_to_csv(rows: &[ScanRow]) -> String {
    let mut out = String::from("eps,probe,error\n");
    for r in rows {
        out.push_str(&format!("{:.9e},{},{:.9e}\n", r.eps, r.probe, r.error));
    }
    out
}

/// Pair a plain error sequence with its eps grid as scan rows.
pub fn errors_to_rows(eps_list: &[f64], probe: usize, errors: &[f64]) -> Vec<ScanRow> {
    eps_list
        .iter()
        .zip(errors)
        .map(|(&eps, &error)| ScanRow { eps, probe, error })
        .collect()
}

/// True when each entry either stays below the floor or is at most slack
/// times its predecessor: "non-increasing up to numerical floor". The floor
/// clause matters once a sequence has converged to rounding level, where the
/// trend claim is empty.
pub fn is_decreasing_within(errors: &[f64], slack: f64, floor: f64) -> bool {
    errors.windows(2).all(|w| w[1] <= slack * w[0] || w[1] <= floor)
}

/// The two-sided solution product ... A(qz) A(z) A(z/q) A(z/q^2) ... of a
/// system regular at both ends. This is the connection matrix M = P of such
/// a system, and unlike the truncated series route it converges for every
/// |q| > 1, which is what the scan needs as q_eps -> 1.
fn m_regular_product(sys: &RationalMatrixSystem, z: C64) -> Result<CMatrix> {
    let q = sys.q().q();
    let mat = sys.matrix();
    let n = mat.dim();
    let id = CMatrix::identity(n, n);
    let mut acc = id.clone();
    for (start, factor_on_left) in [(z, true), (z / q, false)] {
        let mut pt = start;
        let mut deviation = f64::INFINITY;
        let mut steps = 0usize;
        while steps < 20_000 {
            let a = mat.eval(pt)?;
            deviation = (&a - &id).norm();
            if factor_on_left {
                acc = &a * &acc;
                pt *= q;
            } else {
                acc = &acc * &a;
                pt /= q;
            }
            steps += 1;
            if deviation < 1e-14 && steps > 4 {
                break;
            }
        }
        if deviation > 1e-9 {
            return Err(QError::NoConvergence(format!(
                "two-sided product at z = {z} still deviates by {deviation:.2e} after {steps} factors"
            )));
        }
    }
    Ok(acc)
}

/// Connection matrix errors over the eps list for probe pairs (z1, z2,
/// same_slice). Same-slice pairs measure ||P_eps(z1) - P_eps(z2)||, which
/// tends to zero as the limit becomes locally constant; across-slice pairs
/// measure how the discrepancy P_eps(z1)^{-1} P_eps(z2) stabilizes against
/// its value at the smallest eps in the list. Requires a family regular at
/// both ends (Btilde(0) = Btilde(infinity) = 0) and probes off the rays
/// through the singularities of Btilde and through 1.
pub fn connection_limit_scan(
    family: &ConfluentFamily,
    eps_list: &[f64],
    probes: &[(C64, C64, bool)],
) -> Result<Vec<ScanRow>> {
    if probes.is_empty() || eps_list.is_empty() {
        return Err(QError::Domain("connection scan needs probes and an eps list".into()));
    }
    for &eps in eps_list {
        check_eps(eps)?;
    }
    let vanishing = |m: Option<CMatrix>| m.map(|v| v.norm() < 1e-12).unwrap_or(false);
    if !vanishing(family.btilde().at_zero()) || !vanishing(family.btilde().at_infty()) {
        return Err(QError::Domain(
            "connection scan needs Btilde vanishing at 0 and infinity so the members are regular"
                .into(),
        ));
    }

    // Rays through the singularities of Btilde and through 1: the limit
    // jumps there, so probes must keep an angular margin.
    let mut ray_dirs = vec![C64::new(1.0, 0.0)];
    let n = family.dim();
    for i in 0..n {
        for j in 0..n {
            for (root, _) in family.btilde().entry(i, j).den().roots()? {
                if root.norm() > 0.0 {
                    ray_dirs.push(root / root.norm());
                }
            }
        }
    }
    for &(z1, z2, _) in probes {
        for &z in [z1, z2].iter() {
            if z.norm() == 0.0 {
                return Err(QError::Domain("connection probe must lie in C*".into()));
            }
            for d in &ray_dirs {
                if (z / z.norm() - d).norm() < 1e-6 {
                    return Err(QError::Domain(format!(
                        "connection probe {z} sits on the singular ray through {d}"
                    )));
                }
            }
        }
    }

    // Custom builders may deviate from the canonical member shape; the
    // product route only makes sense for genuinely regular members.
    let mut rows = Vec::with_capacity(eps_list.len() * probes.len());
    let mut discrepancies: Vec<Vec<Option<CMatrix>>> =
        vec![vec![None; probes.len()]; eps_list.len()];
    for (ei, &eps) in eps_list.iter().enumerate() {
        let sys = family.system(eps)?;
        for at in [BasePoint::Zero, BasePoint::Infinity] {
            let v = sys.value_at(at)?;
            if (&v - CMatrix::identity(n, n)).norm() > 1e-10 {
                return Err(QError::Domain(format!(
                    "family member at eps = {eps} is not regular at {at}"
                )));
            }
        }
        for (pi, &(z1, z2, same_slice)) in probes.iter().enumerate() {
            let p1 = m_regular_product(&sys, z1)?;
            let p2 = m_regular_product(&sys, z2)?;
            if same_slice {
                rows.push(ScanRow { eps, probe: pi, error: (&p1 - &p2).norm() });
            } else {
                let inv = p1.clone().try_inverse().ok_or_else(|| QError::PoleProximity {
                    what: "connection matrix at the first probe point".into(),
                    near: z1,
                })?;
                discrepancies[ei][pi] = Some(inv * &p2);
            }
        }
    }

    // Across-slice errors compare against the smallest eps in the list.
    let smallest = eps_list
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("eps checked finite"))
        .map(|(i, _)| i)
        .expect("eps list checked nonempty");
    for (pi, &(_, _, same_slice)) in probes.iter().enumerate() {
        if same_slice {
            continue;
        }
        let reference = discrepancies[smallest][pi].clone().expect("filled above");
        for (ei, &eps) in eps_list.iter().enumerate() {
            let d = discrepancies[ei][pi].clone().expect("filled above");
            rows.push(ScanRow { eps, probe: pi, error: (&d - &reference).norm() });
        }
    }
    rows.sort_by(|a, b| (b.eps, a.probe).partial_cmp(&(a.eps, b.probe)).unwrap());
    Ok(rows)
}

/// The stabilized across-slice discrepancy itself, at the smallest eps:
/// the jump of the locally constant limit across the rays separating the
/// two probe points.
pub fn across_slice_discrepancy(
    family: &ConfluentFamily,
    eps: f64,
    z1: C64,
    z2: C64,
) -> Result<CMatrix> {
    let rows = connection_limit_scan(family, &[eps], &[(z1, z2, false)])?;
    debug_assert_eq!(rows.len(), 1);
    let sys = family.system(eps)?;
    let p1 = m_regular_product(&sys, z1)?;
    let p2 = m_regular_product(&sys, z2)?;
    let inv = p1.clone().try_inverse().ok_or_else(|| QError::PoleProximity {
        what: "connection matrix at the first probe point".into(),
        near: z1,
    })?;
    Ok(inv * p2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::build_triple;
    use crate::ratsys::{Polynomial, RationalFunction};
    use crate::theta::{qlog, theta, SeriesTolerance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn tau_default() -> C64 {
        c(0.0, 0.25)
    }

    fn q_default() -> QParameter {
        QParameter::from_tau(tau_default()).unwrap()
    }

    fn rf(num: Polynomial, den: Polynomial) -> RationalFunction {
        RationalFunction::new(num, den).unwrap()
    }

    /// b(z) = z / ((1 - z/4i)(1 + z/3)): simple poles at 4i and -3, vanishes
    /// at 0 and infinity.
    fn scalar_btilde() -> RationalMatrix {
        let num = Polynomial::new(vec![c(0.0, 0.0), c(1.0, 0.0)]);
        let den = Polynomial::new(vec![c(1.0, 0.0), -c(1.0, 0.0) / c(0.0, 4.0)])
            .mul(&Polynomial::new(vec![c(1.0, 0.0), c(1.0, 0.0) / c(3.0, 0.0)]));
        RationalMatrix::from_entries(1, vec![rf(num, den)]).unwrap()
    }

    /// Btilde = [[0, z/(1+z^2)],[0,0]]: nilpotent, poles at +-i.
    fn nilpotent_btilde() -> RationalMatrix {
        let b = rf(
            Polynomial::new(vec![c(0.0, 0.0), c(1.0, 0.0)]),
            Polynomial::new(vec![c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]),
        );
        RationalMatrix::from_entries(
            2,
            vec![
                RationalFunction::zero(),
                b,
                RationalFunction::zero(),
                RationalFunction::zero(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn resummed_theta_matches_the_series_route_at_moderate_eps() {
        let tol = SeriesTolerance::new(1e-15, 200).unwrap();
        for k in 2..=3 {
            let eps = 0.5f64.powi(k);
            let q = QParameter::from_tau(tau_default() * c(eps, 0.0)).unwrap();
            let eta = q.q().ln();
            for z in [c(0.9, 0.4), C64::from_polar(1.0, 2.4), c(0.3, -0.8)] {
                let by_series = theta(&q, z, &tol).unwrap();
                let by_poisson = theta_poisson(eta, x_of(z));
                assert!(
                    (by_series - by_poisson).norm() < 1e-12 * by_series.norm(),
                    "theta mismatch at eps = {eps}, z = {z}"
                );
                let l_series = qlog(&q, z, &tol).unwrap();
                let l_poisson = lq_poisson(eta, x_of(z)).unwrap();
                assert!(
                    (l_series - l_poisson).norm() < 1e-12,
                    "qlog mismatch at eps = {eps}, z = {z}"
                );
            }
        }
    }

    #[test]
    fn symmetric_character_keeps_the_multiplier_and_integer_powers() {
        // Against the series route at moderate eps: the symmetric character
        // is the shifted theta ratio by definition.
        let tol = SeriesTolerance::new(1e-15, 200).unwrap();
        let q = QParameter::from_tau(tau_default() * c(0.25, 0.0)).unwrap();
        let z = c(0.8, 0.5);
        let gamma = c(0.3, 0.1);
        let cc = q.pow(gamma);
        let dec = annulus_decompose(&q, cc).unwrap();
        let sh = q.pow_real(-0.5);
        let direct = z.powi(dec.epsilon as i32) * theta(&q, sh * z, &tol).unwrap()
            / theta(&q, sh * z / dec.reduced, &tol).unwrap();
        let resummed = qchar_symmetric(&q, cc, z).unwrap();
        assert!((direct - resummed).norm() < 1e-12 * direct.norm());

        // Multiplier e(qz) = c e(z) survives to the smallest scan eps.
        let q7 = QParameter::from_tau(tau_default() * c(0.5f64.powi(7), 0.0)).unwrap();
        let c7 = q7.pow(gamma);
        let zq = C64::from_polar(1.0, std::f64::consts::PI / 3.0);
        let lhs = qchar_symmetric(&q7, c7, q7.q() * zq).unwrap();
        let rhs = c7 * qchar_symmetric(&q7, c7, zq).unwrap();
        assert!((lhs - rhs).norm() < 1e-12 * rhs.norm());

        // Integer powers stay exact: e(q, q^2, z) = z^2.
        let e2 = qchar_symmetric(&q7, q7.pow_int(2), zq).unwrap();
        assert!((e2 - zq * zq).norm() < 1e-13);
    }

    #[test]
    fn char_scan_descends_to_the_power_branch() {
        let q0 = q_default();
        let gamma = c(0.3, 0.1);
        let eps_list = default_eps_list();

        let z = C64::from_polar(1.0, std::f64::consts::PI / 3.0);
        let errors = char_limit_scan(&q0, gamma, z, &eps_list).unwrap();
        assert!(is_decreasing_within(&errors, 1.2, 1e-12), "not decreasing: {errors:?}");
        assert!(errors[0] > 1e-2 && errors[0] < 3e-2, "first entry drifted: {}", errors[0]);
        assert!(errors[5] < 1e-3, "last entry too large: {}", errors[5]);

        // Off the unit circle the branch carries a tau0 component.
        let zb = c(0.9, 0.4);
        let errors_b = char_limit_scan(&q0, gamma, zb, &eps_list).unwrap();
        assert!(is_decreasing_within(&errors_b, 1.2, 1e-12));
        assert!(errors_b[5] < 1e-3);
    }

    #[test]
    fn char_scan_is_exact_on_integer_powers() {
        let q0 = q_default();
        let errors =
            char_limit_scan(&q0, c(2.0, 0.0), c(0.7, 0.55), &default_eps_list()).unwrap();
        for e in errors {
            assert!(e < 1e-13, "integer-power scan should be exact, got {e}");
        }
    }

    #[test]
    fn log_scan_example_values() {
        let q0 = q_default();
        let eps_list = default_eps_list();

        let z = C64::from_polar(1.0, std::f64::consts::PI / 3.0);
        let errors = log_limit_scan(&q0, z, &eps_list).unwrap();
        assert!(is_decreasing_within(&errors, 1.2, 1e-12));
        assert!(errors[0] > 1e-1 && errors[0] < 4e-1);
        assert!(errors[5] < 1e-2);

        // z = 1: both sides vanish, every entry is pure rounding.
        let at_one = log_limit_scan(&q0, c(1.0, 0.0), &eps_list).unwrap();
        for e in at_one {
            assert!(e < 1e-13, "log scan at z = 1 should vanish, got {e}");
        }

        let zb = c(0.9, 0.4);
        let errors_b = log_limit_scan(&q0, zb, &eps_list).unwrap();
        assert!(is_decreasing_within(&errors_b, 1.2, 1e-12));
        assert!(errors_b[5] < 5e-3);
    }

    #[test]
    fn tilde_characters_are_homomorphisms() {
        let tau0 = tau_default();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let specs = [
            TildeCharacterSpec::gamma1(),
            TildeCharacterSpec::gamma1_pow(c(-1.0, 0.0)),
            TildeCharacterSpec::gamma1_pow(c(2.0, 0.0)),
            TildeCharacterSpec::gamma2(),
        ];
        for _ in 0..30 {
            let z1 = C64::from_polar(rng.gen_range(0.4..2.5), rng.gen_range(-3.1..3.1));
            let z2 = C64::from_polar(rng.gen_range(0.4..2.5), rng.gen_range(-3.1..3.1));
            for spec in &specs {
                let lhs = spec.eval(tau0, z1 * z2).unwrap();
                let rhs = spec.eval(tau0, z1).unwrap() * spec.eval(tau0, z2).unwrap();
                assert!((lhs - rhs).norm() < 1e-10, "group law fails for {spec:?}");
            }
        }

        // Pinned values for tau0 = i/4: x' = 0.3 has u' = 0, v' = 0.3;
        // x' = 0.1i has u' = -0.025, v' = 0.
        let z_re = (c(0.0, TWO_PI) * c(0.3, 0.0)).exp();
        let z_im = (c(0.0, TWO_PI) * c(0.0, 0.1)).exp();
        let g2 = TildeCharacterSpec::gamma2();
        assert!((g2.eval(tau0, z_re).unwrap() - (c(0.0, TWO_PI * 0.3)).exp()).norm() < 1e-12);
        assert!((g2.eval(tau0, z_im).unwrap() - c(1.0, 0.0)).norm() < 1e-12);
        let g1 = TildeCharacterSpec::gamma1();
        assert!((g1.eval(tau0, z_re).unwrap() - c(1.0, 0.0)).norm() < 1e-12);
        assert!(
            (g1.eval(tau0, z_im).unwrap() - (c(0.0, -TWO_PI * 0.025)).exp()).norm() < 1e-12
        );

        // Real tau0 has no transverse direction to split along.
        assert!(matches!(
            g1.eval(c(0.3, 0.0), c(1.0, 1.0)),
            Err(QError::Domain(_))
        ));
    }

    #[test]
    fn family_members_keep_the_deformation_invariant() {
        let fam = ConfluentFamily::new(q_default(), scalar_btilde());
        assert!(fam.family_defect(0.25).unwrap() < 1e-14);
        assert!(fam.family_defect(0.5f64.powi(7)).unwrap() < 1e-11);

        // The member at eps really is I + (q_eps - 1) Btilde.
        let sys = fam.system(0.25).unwrap();
        let q = fam.q_eps(0.25).unwrap();
        let z = c(0.6, 0.2);
        let expected = c(1.0, 0.0)
            + (q.q() - c(1.0, 0.0)) * fam.btilde().entry(0, 0).eval(z).unwrap();
        assert!((sys.matrix().eval(z).unwrap()[(0, 0)] - expected).norm() < 1e-14);

        // A builder that drifts at second order shows up in the defect.
        let drifting = ConfluentFamily::with_builder(
            q_default(),
            scalar_btilde(),
            |q, btilde| {
                let qm1 = q.q() - c(1.0, 0.0);
                let b = btilde.entry(0, 0).clone();
                let second = b.mul(&b)?.scale(qm1 * qm1);
                let entry = b.scale(qm1).add(&RationalFunction::one())?.add(&second)?;
                RationalMatrixSystem::new(
                    q.clone(),
                    RationalMatrix::from_entries(1, vec![entry])?,
                )
            },
        );
        let defect = drifting.family_defect(0.25).unwrap();
        assert!(defect > 1e-4 && defect < 1.0, "unexpected defect {defect}");

        // eps outside (0, 1] is refused.
        assert!(matches!(fam.system(0.0), Err(QError::Domain(_))));
        assert!(matches!(fam.system(-0.5), Err(QError::Domain(_))));
        assert!(matches!(fam.system(1.5), Err(QError::Domain(_))));
    }

    #[test]
    fn local_generators_approach_the_differential_monodromy() {
        let b0 = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(0.3, 0.0),
            c(0.0, 0.1),
        ]));
        let fam = ConfluentFamily::new(q_default(), RationalMatrix::constant(&b0).unwrap());
        let eps_list = default_eps_list();
        let (g1, g2) = local_gen_limit(&fam, &eps_list).unwrap();
        assert!(is_decreasing_within(&g1, 1.2, 1e-12), "gamma1 errors: {g1:?}");
        assert!(is_decreasing_within(&g2, 1.2, 1e-12), "gamma2 errors: {g2:?}");
        assert!(g1[0] > 0.02 && g1[0] < 0.05, "gamma1 start drifted: {}", g1[0]);
        assert!(g2[0] > 0.2 && g2[0] < 0.35, "gamma2 start drifted: {}", g2[0]);
        assert!(g1[5] < 2e-3, "gamma1 end too large: {}", g1[5]);
        assert!(g2[5] < 1.5e-2, "gamma2 end too large: {}", g2[5]);

        // Eigenvalues of Btilde(0) a nonzero integer apart are resonant.
        let resonant = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(0.2, 0.0),
            c(1.2, 0.0),
        ]));
        let bad = ConfluentFamily::new(q_default(), RationalMatrix::constant(&resonant).unwrap());
        assert!(matches!(local_gen_limit(&bad, &eps_list), Err(QError::Domain(_))));

        // A pole of Btilde at 0 leaves no constant term to exponentiate.
        let pole = RationalMatrix::from_entries(
            1,
            vec![rf(Polynomial::one(), Polynomial::new(vec![c(0.0, 0.0), c(1.0, 0.0)]))],
        )
        .unwrap();
        let no_const = ConfluentFamily::new(q_default(), pole);
        assert!(matches!(local_gen_limit(&no_const, &eps_list), Err(QError::Domain(_))));
    }

    #[test]
    fn product_route_matches_the_triple_route_at_moderate_eps() {
        let fam = ConfluentFamily::new(q_default(), scalar_btilde());
        let z = C64::from_polar(0.8, 0.6);
        for eps in [1.0, 0.5] {
            let sys = fam.system(eps).unwrap();
            let by_product = m_regular_product(&sys, z).unwrap();
            let triple = build_triple(&sys, 40).unwrap();
            let by_series = triple.m(z).unwrap();
            assert!(
                (&by_product - &by_series).norm() < 1e-9,
                "routes disagree at eps = {eps}"
            );
        }
    }

    #[test]
    fn connection_scan_sees_a_flat_limit_within_a_slice() {
        let fam = ConfluentFamily::new(q_default(), scalar_btilde());
        let eps_list = default_eps_list();
        let probes = [(C64::from_polar(0.8, 0.6), C64::from_polar(0.5, 1.0), true)];
        let rows = connection_limit_scan(&fam, &eps_list, &probes).unwrap();
        let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
        assert_eq!(errors.len(), 6);
        assert!(errors[0] < 1e-2 && errors[0] > 1e-4, "start drifted: {}", errors[0]);
        assert!(is_decreasing_within(&errors, 1.2, 1e-10), "errors: {errors:?}");
        for e in &errors[2..] {
            assert!(*e < 1e-10, "converged entries should sit at the floor: {e}");
        }
    }

    #[test]
    fn connection_scan_jump_matches_the_residue_of_btilde() {
        // Crossing the ray through the pole at 4i multiplies the locally
        // constant limit by e^{-2 i pi Res_{s=4i} b(s)/s}; the residue of
        // 1/((1 - s/4i)(1 + s/3)) at 4i is (-48 - 36i)/25.
        let fam = ConfluentFamily::new(q_default(), scalar_btilde());
        let eps_list = default_eps_list();
        let z1 = C64::from_polar(0.7, 0.6);
        let z2 = C64::from_polar(0.7, 2.2);
        let rows = connection_limit_scan(&fam, &eps_list, &[(z1, z2, false)]).unwrap();
        let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
        assert!(is_decreasing_within(&errors, 1.2, 1e-10), "errors: {errors:?}");
        assert!(errors[4] < 1e-4, "stabilization too slow: {}", errors[4]);
        assert_eq!(errors[5], 0.0, "last entry compares the reference with itself");

        let residue = c(-48.0, -36.0) / c(25.0, 0.0);
        let jump = (-c(0.0, TWO_PI) * residue).exp();
        let d = across_slice_discrepancy(&fam, eps_list[5], z1, z2).unwrap();
        assert!((d[(0, 0)] - jump).norm() < 1e-4, "jump off: {} vs {}", d[(0, 0)], jump);
        assert!((d[(0, 0)] - c(1.0, 0.0)).norm() > 0.9, "jump should be far from trivial");
    }

    #[test]
    fn connection_scan_nilpotent_corner_is_the_bilateral_sum() {
        let fam = ConfluentFamily::new(q_default(), nilpotent_btilde());
        let eps_list = default_eps_list();
        let z1 = C64::from_polar(0.8, 0.6);
        let z2 = C64::from_polar(0.5, 1.0);
        let rows = connection_limit_scan(&fam, &eps_list, &[(z1, z2, true)]).unwrap();
        let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
        assert!(errors[0] < 1e-3, "start: {}", errors[0]);
        assert!(is_decreasing_within(&errors, 1.2, 1e-10), "errors: {errors:?}");

        // The (0,1) entry of the product telescopes to the bilateral sum of
        // a_eps = (q-1) z/(1+z^2) over the q-spiral.
        let eps = 0.5f64.powi(4);
        let q = fam.q_eps(eps).unwrap();
        let sys = fam.system(eps).unwrap();
        let corner = m_regular_product(&sys, z1).unwrap()[(0, 1)];
        let a_at = |z: C64| (q.q() - c(1.0, 0.0)) * z / (c(1.0, 0.0) + z * z);
        let mut bilateral = a_at(z1);
        for nn in 1..40_000 {
            let t = a_at(q.pow_int(nn) * z1) + a_at(q.pow_int(-nn) * z1);
            bilateral += t;
            if t.norm() < 1e-16 && nn > 8 {
                break;
            }
        }
        assert!((corner - bilateral).norm() < 1e-10, "corner vs bilateral sum");

        // The diagonal of a unipotent member stays exactly 1.
        let full = m_regular_product(&sys, z1).unwrap();
        assert!((full[(0, 0)] - c(1.0, 0.0)).norm() < 1e-13);
        assert!((full[(1, 1)] - c(1.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn constant_family_has_identity_connection_data() {
        let zero = RationalMatrix::constant(&CMatrix::zeros(2, 2)).unwrap();
        let fam = ConfluentFamily::new(q_default(), zero);
        let rows = connection_limit_scan(
            &fam,
            &default_eps_list(),
            &[(c(0.6, 0.3), c(-0.2, 0.7), true)],
        )
        .unwrap();
        for r in rows {
            assert!(r.error < 1e-14, "identity family should be flat, got {}", r.error);
        }
    }

    #[test]
    fn scan_guards_refuse_bad_inputs() {
        let q0 = q_default();
        let eps_list = default_eps_list();

        // Points on the cut -q0^R.
        assert!(matches!(
            char_limit_scan(&q0, c(0.3, 0.0), c(-1.3, 0.0), &eps_list),
            Err(QError::Domain(_))
        ));
        assert!(matches!(
            log_limit_scan(&q0, c(-0.4, 0.0), &eps_list),
            Err(QError::Domain(_))
        ));
        assert!(matches!(
            char_limit_scan(&q0, c(0.3, 0.0), c(0.0, 0.0), &eps_list),
            Err(QError::Domain(_))
        ));

        // Bad eps entries.
        assert!(matches!(
            log_limit_scan(&q0, c(0.5, 0.5), &[0.25, 0.0]),
            Err(QError::Domain(_))
        ));
        assert!(matches!(
            log_limit_scan(&q0, c(0.5, 0.5), &[-0.25]),
            Err(QError::Domain(_))
        ));

        // Probes on a singular ray of the family (the pole at 4i).
        let fam = ConfluentFamily::new(q_default(), scalar_btilde());
        assert!(matches!(
            connection_limit_scan(&fam, &eps_list, &[(c(0.0, 0.5), c(0.3, 0.3), true)]),
            Err(QError::Domain(_))
        ));
        // Probes on the ray through 1.
        assert!(matches!(
            connection_limit_scan(&fam, &eps_list, &[(c(0.5, 0.0), c(0.3, 0.3), true)]),
            Err(QError::Domain(_))
        ));

        // A family not regular at the ends cannot use the connection scan.
        let nonregular = ConfluentFamily::new(
            q_default(),
            RationalMatrix::constant(&CMatrix::identity(1, 1)).unwrap(),
        );
        assert!(matches!(
            connection_limit_scan(&nonregular, &eps_list, &[(c(0.5, 0.5), c(0.3, 0.3), true)]),
            Err(QError::Domain(_))
        ));
    }

    #[test]
    fn scan_rows_render_as_csv() {
        let rows = vec![
            ScanRow { eps: 0.25, probe: 0, error: 1.5e-3 },
            ScanRow { eps: 0.125, probe: 0, error: 7.2e-4 },
            ScanRow { eps: 0.25, probe: 1, error: 3.0e-2 },
        ];
        let csv = rows_to_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "eps,probe,error");
        assert_eq!(lines.len(), 4);
        for (line, row) in lines[1..].iter().zip(&rows) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 3);
            assert!((fields[0].parse::<f64>().unwrap() - row.eps).abs() < 1e-12);
            assert_eq!(fields[1].parse::<usize>().unwrap(), row.probe);
            assert!((fields[2].parse::<f64>().unwrap() - row.error).abs() < 1e-12 * row.error.max(1.0));
        }

        let grid = default_eps_list();
        assert_eq!(grid.len(), 6);
        assert!((grid[0] - 0.25).abs() < 1e-15);
        assert!((grid[5] - 0.0078125).abs() < 1e-15);
        let paired = errors_to_rows(&grid, 3, &[1.0; 6]);
        assert_eq!(paired.len(), 6);
        assert_eq!(paired[2].probe, 3);
    }
}
