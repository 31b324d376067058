//! Connection triples (A^(0), M, A^(inf)): the meromorphic intertwiner M
//! built from the two local reductions, Birkhoff's connection matrix P and
//! its twisted variant P-breve, evaluation paths, tensor products with their
//! twisting cocycle, connection-component samples, and the closed-form
//! abelian oracles used to cross-check the pipeline.

use crate::error::{QError, Result};
use crate::flatcat::FlatObject;
use crate::matfun::{e_matrix, kron, phi_cocycle, unipotent_pow};
use crate::qcore::{annulus_decompose, char_eval, CharacterSpec, QParameter};
use crate::ratsys::{
    normalize_nonresonant, BasePoint, RationalFunction, RationalMatrixSystem, SingularLocus,
};
use crate::reduction::{eval_gauge, reduce_at_infty, reduce_at_zero, TruncatedMatrixSeries};
use crate::theta::{theta, SeriesTolerance};
use crate::{C64, CMatrix};

/// How a triple evaluates its intertwiner: from the two local gauge series
/// of a rational system, or as the Kronecker product of two inner triples.
#[derive(Debug, Clone)]
enum MEvaluator {
    Series {
        zero: TruncatedMatrixSeries,
        infty: TruncatedMatrixSeries,
    },
    Tensor(Box<ConnectionTriple>, Box<ConnectionTriple>),
}

/// The connection triple of a fuchsian system: both constant forms, the
/// intertwiner M with M(qz) A^(0) = A^(inf) M(z), the singular locus driving
/// the safe-set discipline, and the generators of the exponent group.
#[derive(Debug, Clone)]
pub struct ConnectionTriple {
    a0: FlatObject,
    ainf: FlatObject,
    evaluator: MEvaluator,
    sigma_set: SingularLocus,
    exponent_group_gens: Vec<C64>,
}

impl ConnectionTriple {
    pub fn a0(&self) -> &FlatObject {
        &self.a0
    }

    pub fn ainf(&self) -> &FlatObject {
        &self.ainf
    }

    pub fn sigma_set(&self) -> &SingularLocus {
        &self.sigma_set
    }

    /// Generators of the exponent group C: the local exponents at both ends.
    pub fn exponent_group_gens(&self) -> &[C64] {
        &self.exponent_group_gens
    }

    pub fn q(&self) -> &QParameter {
        self.a0.q()
    }

    pub fn dim(&self) -> usize {
        self.a0.dim()
    }

    /// The intertwiner M(z). Refuses evaluation on the spirals q^Z Sigma.
    pub fn m(&self, z: C64) -> Result<CMatrix> {
        match &self.evaluator {
            MEvaluator::Series { zero, infty } => {
                let f0 = eval_gauge(zero, z)?;
                let finf = eval_gauge(infty, z)?;
                let inv = finf.try_inverse().ok_or(QError::PoleProximity {
                    what: "gauge at infinity is singular at the evaluation point".into(),
                    near: z,
                })?;
                Ok(inv * f0)
            }
            MEvaluator::Tensor(t1, t2) => Ok(kron(&t1.m(z)?, &t2.m(z)?)),
        }
    }

    /// Kronecker product triple, intertwining the tensor constant forms with
    /// M(z) = M1(z) (x) M2(z).
    pub fn tensor(&self, other: &ConnectionTriple) -> Result<ConnectionTriple> {
        let a0 = self.a0.tensor(&other.a0)?;
        let ainf = self.ainf.tensor(&other.ainf)?;
        let mut points = self.sigma_set.points.clone();
        for &(p, m) in &other.sigma_set.points {
            if let Some(existing) = points
                .iter_mut()
                .find(|(s, _)| (*s - p).norm() <= 1e-9 * p.norm().max(1.0))
            {
                existing.1 = existing.1.max(m);
            } else {
                points.push((p, m));
            }
        }
        let sigma_set = SingularLocus {
            points,
            at_zero: self.sigma_set.at_zero || other.sigma_set.at_zero,
            at_infinity: self.sigma_set.at_infinity || other.sigma_set.at_infinity,
        };
        let mut gens = self.exponent_group_gens.clone();
        gens.extend_from_slice(&other.exponent_group_gens);
        Ok(ConnectionTriple {
            a0,
            ainf,
            evaluator: MEvaluator::Tensor(Box::new(self.clone()), Box::new(other.clone())),
            sigma_set,
            exponent_group_gens: gens,
        })
    }
}

/// Build the connection triple of a strictly fuchsian system: shear both
/// ends to non-resonant annulus exponents, reduce at 0 and at infinity, and
/// assemble M = (M^(inf))^{-1} M^(0).
pub fn build_triple(sys: &RationalMatrixSystem, k_max: usize) -> Result<ConnectionTriple> {
    let (at_zero, _) = normalize_nonresonant(sys, BasePoint::Zero)?;
    let (normalized, _) = normalize_nonresonant(&at_zero, BasePoint::Infinity)?;
    let zero = reduce_at_zero(&normalized, k_max)?;
    let infty = reduce_at_infty(&normalized, k_max)?;
    let sigma_set = normalized.singular_locus()?;
    let a0 = zero.constant_form().clone();
    let ainf = infty.constant_form().clone();
    let mut gens: Vec<C64> = Vec::new();
    for flat in [&a0, &ainf] {
        for dec in flat.annulus_spectrum() {
            gens.push(dec.reduced);
        }
    }
    Ok(ConnectionTriple {
        a0,
        ainf,
        evaluator: MEvaluator::Series { zero, infty },
        sigma_set,
        exponent_group_gens: gens,
    })
}

/// Birkhoff's connection matrix P(z) = e_{q,A^(inf)}(z)^{-1} M(z)
/// e_{q,A^(0)}(z), an elliptic function of z on the safe set.
pub fn connection_p(t: &ConnectionTriple, z: C64, tol: &SeriesTolerance) -> Result<CMatrix> {
    let q = t.q();
    let e0 = e_matrix(q, t.a0.dunford(), z, tol)?;
    let einf = e_matrix(q, t.ainf.dunford(), z, tol)?;
    let m = t.m(z)?;
    let inv = einf.try_inverse().ok_or(QError::PoleProximity {
        what: "matrix character at infinity is singular at the evaluation point".into(),
        near: z,
    })?;
    Ok(inv * m * e0)
}

/// The path functor value Gamma_{z0}: the intertwiner evaluated at z0, as an
/// invertible matrix.
pub fn gamma_path(t: &ConnectionTriple, z0: C64) -> Result<CMatrix> {
    let m = t.m(z0)?;
    let n = m.nrows();
    let det = m.determinant();
    if det.norm() <= 1e-10 * m.norm().max(1.0).powi(n as i32) {
        return Err(QError::PoleProximity {
            what: "intertwiner is numerically singular; the base point is \
                   effectively in the singular locus"
                .into(),
            near: z0,
        });
    }
    Ok(m)
}

/// g_a applied to the annulus-reduced semisimple part of a flat object.
fn g_twist(flat: &FlatObject, ga: &CharacterSpec) -> Result<CMatrix> {
    let q = flat.q().clone();
    flat.dunford().apply_scalar(|c| {
        let reduced = annulus_decompose(&q, c)?.reduced;
        char_eval(&q, ga, reduced)
    })
}

/// The twisted connection matrix
/// P-breve(a) = g_a(Abar_s^(inf))^{-1} A_u^(inf)^{-l_q(a)} M(a)
///              A_u^(0)^{l_q(a)} g_a(Abar_s^(0)),
/// whose values transform by group characters under a -> qa.
pub fn pbreve(t: &ConnectionTriple, a: C64, tol: &SeriesTolerance) -> Result<CMatrix> {
    let q = t.q();
    let ga = CharacterSpec::g(q, a)?;
    let l = crate::theta::qlog(q, a, tol)?;
    let tw_inf = g_twist(&t.ainf, &ga)?;
    let tw_0 = g_twist(&t.a0, &ga)?;
    let up_inf = unipotent_pow(t.ainf.dunford().unipotent(), -l)?;
    let up_0 = unipotent_pow(t.a0.dunford().unipotent(), l)?;
    let inv = tw_inf.try_inverse().ok_or(QError::PoleProximity {
        what: "semisimple twist at infinity is singular".into(),
        near: a,
    })?;
    Ok(inv * up_inf * t.m(a)? * up_0 * tw_0)
}

/// Consecutive connection-component samples V(a_i)^{-1} V(a_{i+1}) with
/// V = P-breve when twisted, V = P otherwise.
pub fn connection_group_sample(
    t: &ConnectionTriple,
    points: &[C64],
    twisted: bool,
    tol: &SeriesTolerance,
) -> Result<Vec<CMatrix>> {
    let mut values = Vec::with_capacity(points.len());
    for &a in points {
        values.push(if twisted {
            pbreve(t, a, tol)?
        } else {
            connection_p(t, a, tol)?
        });
    }
    let mut samples = Vec::new();
    for w in values.windows(2) {
        let inv = w[0].clone().try_inverse().ok_or(QError::PoleProximity {
            what: "connection value is singular; sample point is unusable".into(),
            near: points[samples.len()],
        })?;
        samples.push(inv * w[1].clone());
    }
    Ok(samples)
}

/// Residual of the twisted tensor identity
/// P_{12} = Phi^(inf)(z) (P_1 (x) P_2) Phi^(0)(z)^{-1}
/// where Phi is the tensor-defect cocycle of the matrix characters.
pub fn twisted_tensor_check(
    t1: &ConnectionTriple,
    t2: &ConnectionTriple,
    z: C64,
    tol: &SeriesTolerance,
) -> Result<f64> {
    let t12 = t1.tensor(t2)?;
    let p12 = connection_p(&t12, z, tol)?;
    let p1 = connection_p(t1, z, tol)?;
    let p2 = connection_p(t2, z, tol)?;
    let q = t1.q();
    let phi_inf = phi_cocycle(q, t1.ainf.dunford(), t2.ainf.dunford(), z, tol)?;
    let phi_0 = phi_cocycle(q, t1.a0.dunford(), t2.a0.dunford(), z, tol)?;
    let phi_0_inv = phi_0.try_inverse().ok_or(QError::PoleProximity {
        what: "tensor cocycle at 0 is singular at the evaluation point".into(),
        near: z,
    })?;
    Ok((p12 - phi_inf * kron(&p1, &p2) * phi_0_inv).norm())
}

/// Closed-form elliptic intertwiner of the regular rank-1 case: with
/// prod u_i = prod v_i, the function
/// p(z) = prod u_i Theta(-z/u_i) / (v_i Theta(-z/v_i)) satisfies
/// p(qz) = p(z), with zeros on u_i q^Z and poles on v_i q^Z, matching the
/// divisor of the pipeline intertwiner up to one multiplicative constant.
pub fn rank1_regular_p(
    u: &[C64],
    v: &[C64],
    z: C64,
    q: &QParameter,
    tol: &SeriesTolerance,
) -> Result<C64> {
    if u.is_empty() || u.len() != v.len() {
        return Err(QError::Contract(format!(
            "need matching nonempty zero/pole lists, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    let prod_u: C64 = u.iter().product();
    let prod_v: C64 = v.iter().product();
    if (prod_u - prod_v).norm() > 1e-10 * prod_u.norm().max(1.0) {
        return Err(QError::Domain(format!(
            "regularity needs prod u_i = prod v_i, got {prod_u} vs {prod_v}"
        )));
    }
    for s in v {
        if q.spiral_distance(z, *s) <= 1e-6 {
            return Err(QError::PoleProximity {
                what: format!("closed form has a pole on the spiral q^Z * {s}"),
                near: z,
            });
        }
    }
    let mut p = C64::new(1.0, 0.0);
    for (ui, vi) in u.iter().zip(v) {
        let num = theta(q, -z / ui, tol)?;
        let den = theta(q, -z / vi, tol)?;
        p *= ui * num / (vi * den);
    }
    Ok(p)
}

/// Bilateral sum p(z) = sum over n in Z of a(q^n z) for a vanishing at both
/// 0 and infinity: the off-diagonal entry of the rank-2 unipotent
/// intertwiner. Each tail stops once three successive terms fall below
/// 1e-14 of the accumulated scale; n_cap bounds either tail.
pub fn rank2_unipotent_p(
    a: &RationalFunction,
    z: C64,
    q: &QParameter,
    n_cap: usize,
) -> Result<C64> {
    match a.at_zero() {
        Some(v) if v.norm() <= 1e-12 => {}
        _ => return Err(QError::Domain("bilateral sum needs a(0) = 0".into())),
    }
    match a.at_infty() {
        Some(v) if v.norm() <= 1e-12 => {}
        _ => return Err(QError::Domain("bilateral sum needs a(infinity) = 0".into())),
    }
    let mut total = a.eval(z)?;
    let mut scale = total.norm().max(1.0);
    for dir in [1i64, -1i64] {
        let mut small_run = 0;
        let mut n = 1i64;
        loop {
            let term = a.eval(q.pow_int(dir * n) * z)?;
            total += term;
            scale = scale.max(total.norm());
            if term.norm() < 1e-14 * scale {
                small_run += 1;
                if small_run >= 3 {
                    break;
                }
            } else {
                small_run = 0;
            }
            n += 1;
            if n as usize > n_cap {
                return Err(QError::NoConvergence(format!(
                    "bilateral tail (direction {dir}) did not settle within {n_cap} terms"
                )));
            }
        }
    }
    Ok(total)
}

/// Ellipticity defect of a triple's connection matrix over sample points:
/// sup of ||P(qz) - P(z)|| / scale.
pub fn ellipticity_defect(
    t: &ConnectionTriple,
    points: &[C64],
    tol: &SeriesTolerance,
) -> Result<f64> {
    let q = t.q().q();
    let mut worst = 0.0f64;
    for &z in points {
        let p = connection_p(t, z, tol)?;
        let pq = connection_p(t, q * z, tol)?;
        let defect = (pq - &p).norm() / p.norm().max(1.0);
        worst = worst.max(defect);
    }
    Ok(worst)
}
