//! Local reduction of a fuchsian system to its constant form: the unique
//! formal gauge F with F(0) = I (or F(infinity) = I) satisfying
//! (sigma_q F) A(pt) = A F, computed order by order, then evaluated by
//! series summation inside a trust disk and by the functional equation
//! itself along q-spirals outside it. The regular case (A(0) = I) also gets
//! the direct infinite-product solution.

use crate::error::{QError, Result};
use crate::flatcat::FlatObject;
use crate::matfun::solve_intertwine;
use crate::ratsys::{BasePoint, RationalMatrixSystem};
use crate::{C64, CMatrix};

/// Truncated power series for the reducing gauge at one base point, together
/// with everything needed to evaluate it: the constant form, the source
/// system, and the radius inside which plain summation is trusted.
///
/// The local coordinate is z at 0 and w = 1/z at infinity; coeffs[k] is the
/// k-th coefficient in that coordinate, with coeffs[0] = I.
#[derive(Debug, Clone)]
pub struct TruncatedMatrixSeries {
    base_point: BasePoint,
    a0: FlatObject,
    coeffs: Vec<CMatrix>,
    trust_radius: f64,
    system: RationalMatrixSystem,
}

impl TruncatedMatrixSeries {
    pub fn base_point(&self) -> BasePoint {
        self.base_point
    }

    /// The constant form A(pt) the series reduces to.
    pub fn constant_form(&self) -> &FlatObject {
        &self.a0
    }

    /// F_0..F_K in the local coordinate.
    pub fn coeffs(&self) -> &[CMatrix] {
        &self.coeffs
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn trust_radius(&self) -> f64 {
        self.trust_radius
    }

    pub fn system(&self) -> &RationalMatrixSystem {
        &self.system
    }

    /// q^k at 0, q^{-k} at infinity: the factor sigma_q puts on the k-th
    /// local coefficient.
    fn shift_factor(&self, k: usize) -> C64 {
        match self.base_point {
            BasePoint::Zero => self.system.q().pow_int(k as i64),
            BasePoint::Infinity => self.system.q().pow_int(-(k as i64)),
        }
    }
}

/// Shared construction for both base points.
fn reduce_at(sys: &RationalMatrixSystem, at: BasePoint, k_max: usize) -> Result<TruncatedMatrixSeries> {
    if k_max > 200 {
        return Err(QError::Contract(format!(
            "truncation order {k_max} exceeds the supported 200"
        )));
    }
    let q = sys.q().clone();
    let value = sys.value_at(at)?;
    let a0 = FlatObject::new(q.clone(), value.clone())?;
    let taylor = sys.taylor_at(at, k_max)?;

    let n = sys.dim();
    let mut coeffs: Vec<CMatrix> = Vec::with_capacity(k_max + 1);
    coeffs.push(CMatrix::identity(n, n));
    for k in 1..=k_max {
        let mut rhs = CMatrix::zeros(n, n);
        for j in 1..=k {
            rhs += &taylor[j] * &coeffs[k - j];
        }
        let shift = match at {
            BasePoint::Zero => k as i64,
            BasePoint::Infinity => -(k as i64),
        };
        coeffs.push(solve_intertwine(&q, shift, &value, &rhs)?);
    }

    let locus = sys.singular_locus()?;
    let trust_radius = match at {
        BasePoint::Zero => locus
            .min_modulus()
            .map(|r| r / q.q().norm() * 0.9)
            .unwrap_or(f64::INFINITY),
        BasePoint::Infinity => locus
            .max_modulus()
            .map(|r| 1.0 / r / q.q().norm() * 0.9)
            .unwrap_or(f64::INFINITY),
    };

    let series = TruncatedMatrixSeries {
        base_point: at,
        a0,
        coeffs,
        trust_radius,
        system: sys.clone(),
    };

    // Recurrence residual: the invariant every consumer relies on.
    for k in 0..=k_max {
        let lhs = &series.coeffs[k] * series.a0.matrix() * series.shift_factor(k);
        let mut rhs = CMatrix::zeros(n, n);
        let mut scale = 0.0f64;
        for j in 0..=k {
            rhs += &taylor[j] * &series.coeffs[k - j];
            scale += taylor[j].norm() * series.coeffs[k - j].norm();
        }
        let res = (lhs - rhs).norm();
        if res > 1e-10 * scale.max(1.0) {
            return Err(QError::NoConvergence(format!(
                "reduction recurrence residual {res:.3e} at order {k}"
            )));
        }
    }
    Ok(series)
}

/// Reducing gauge at 0: F(0) = I, F(qz) A(0) = A(z) F(z).
pub fn reduce_at_zero(sys: &RationalMatrixSystem, k_max: usize) -> Result<TruncatedMatrixSeries> {
    reduce_at(sys, BasePoint::Zero, k_max)
}

/// Reducing gauge at infinity: F(infinity) = I, F(qz) A(infinity) = A(z) F(z).
pub fn reduce_at_infty(sys: &RationalMatrixSystem, k_max: usize) -> Result<TruncatedMatrixSeries> {
    reduce_at(sys, BasePoint::Infinity, k_max)
}

/// Geometric tail bound for the dropped terms after summing coeffs at local
/// radius x, estimated from the decay of the last five coefficient norms.
/// None means the terms do not visibly decay and summation cannot be trusted.
fn tail_estimate(coeffs: &[CMatrix], x_norm: f64) -> Option<f64> {
    let k_top = coeffs.len() - 1;
    let lo = k_top.saturating_sub(4);
    let norms: Vec<f64> = (lo..=k_top).map(|k| coeffs[k].norm()).collect();
    let top = norms.iter().cloned().fold(0.0f64, f64::max);
    if top == 0.0 {
        return Some(0.0);
    }
    let mut ratio = 0.0f64;
    let mut seen = false;
    for w in norms.windows(2) {
        if w[0] > 0.0 && w[1] > 0.0 {
            ratio = ratio.max(w[1] / w[0]);
            seen = true;
        }
    }
    // Sparse coefficient support gives no consecutive pair; the series then
    // decays at least as fast as the generic safety ratio.
    let rho = if seen { ratio * x_norm } else { 0.5 };
    if rho >= 0.99 {
        return None;
    }
    Some(top * x_norm.powi(lo as i32) * rho / (1.0 - rho))
}

fn sum_series(coeffs: &[CMatrix], x: C64) -> CMatrix {
    let n = coeffs[0].nrows();
    let mut acc = CMatrix::zeros(n, n);
    for f in coeffs.iter().rev() {
        acc = acc * x + f;
    }
    acc
}

/// Refuse evaluation within relative distance 1e-6 of the spirals q^Z * s
/// for s in the singular locus.
fn guard_unsafe_set(sys: &RationalMatrixSystem, z: C64) -> Result<()> {
    let locus = sys.singular_locus()?;
    for (s, _) in &locus.points {
        if sys.q().spiral_distance(z, *s) <= 1e-6 {
            return Err(QError::PoleProximity {
                what: format!("evaluation point lies on the singular spiral q^Z * {s}"),
                near: z,
            });
        }
    }
    Ok(())
}

/// Evaluate the reducing gauge at z: series summation when the local
/// coordinate sits inside the trust disk, otherwise transport along the
/// q-spiral with the functional equation F(qz) = A(z) F(z) A(pt)^{-1}.
pub fn eval_gauge(series: &TruncatedMatrixSeries, z: C64) -> Result<CMatrix> {
    if z.norm() == 0.0 || !z.is_finite() {
        return Err(QError::Domain(format!("gauge evaluation needs z in C*, got {z}")));
    }
    let sys = &series.system;
    guard_unsafe_set(sys, z)?;
    let q = sys.q().clone();
    let abs_q = q.q().norm();

    // Local coordinate and the number of spiral steps needed to get inside
    // the trust disk.
    let local = |zz: C64| -> f64 {
        match series.base_point {
            BasePoint::Zero => zz.norm(),
            BasePoint::Infinity => 1.0 / zz.norm(),
        }
    };
    let steps = if local(z) <= series.trust_radius {
        0
    } else {
        let m = (local(z) / series.trust_radius).ln() / abs_q.ln();
        let m = m.ceil() as i64;
        if m > 400 {
            return Err(QError::NoConvergence(format!(
                "{m} continuation steps from {z} is out of scope"
            )));
        }
        m
    };

    // Innermost point, summed directly.
    let inner = match series.base_point {
        BasePoint::Zero => z * q.pow_int(-steps),
        BasePoint::Infinity => z * q.pow_int(steps),
    };
    let x = match series.base_point {
        BasePoint::Zero => inner,
        BasePoint::Infinity => C64::new(1.0, 0.0) / inner,
    };
    let sum = sum_series(&series.coeffs, x);
    let tail = tail_estimate(&series.coeffs, x.norm()).ok_or_else(|| {
        QError::NoConvergence(
            "series coefficients do not decay at this radius; a higher truncation order K is needed"
                .into(),
        )
    })?;
    if tail > 1e-10 * sum.norm().max(1.0) {
        return Err(QError::NoConvergence(format!(
            "series tail estimate {tail:.3e} is too large; a higher truncation order K is needed"
        )));
    }
    if steps == 0 {
        return Ok(sum);
    }

    let a0 = series.a0.matrix();
    match series.base_point {
        BasePoint::Zero => {
            // F(z) = A(z/q) ... A(z/q^m) F(z/q^m) A(0)^{-m}.
            let a0_inv = a0.clone().try_inverse().ok_or_else(|| {
                QError::Domain("constant form is numerically singular".into())
            })?;
            let mut left = CMatrix::identity(sum.nrows(), sum.ncols());
            for j in 1..=steps {
                left *= sys.eval(z * q.pow_int(-j))?;
            }
            let mut right = sum;
            for _ in 0..steps {
                right *= &a0_inv;
            }
            Ok(left * right)
        }
        BasePoint::Infinity => {
            // F(z) = A(z)^{-1} ... A(q^{m-1}z)^{-1} F(q^m z) A(inf)^m.
            let mut left = CMatrix::identity(sum.nrows(), sum.ncols());
            for j in (0..steps).rev() {
                let aj = sys.eval(z * q.pow_int(j))?;
                let aj_inv = aj.try_inverse().ok_or_else(|| QError::PoleProximity {
                    what: "continuation factor is singular (det A vanishes)".into(),
                    near: z * q.pow_int(j),
                })?;
                left = aj_inv * left;
            }
            let mut right = sum;
            for _ in 0..steps {
                right *= a0;
            }
            Ok(left * right)
        }
    }
}

/// The regular-case solution at 0: when A(0) = I, the left-ordered product
/// A(q^{-1}z) A(q^{-2}z) ... converges and solves X(qz) = A(z) X(z).
pub fn product_solution_regular(
    sys: &RationalMatrixSystem,
    z: C64,
    n_factors: usize,
) -> Result<CMatrix> {
    let a0 = sys.value_at(BasePoint::Zero)?;
    let n = sys.dim();
    if (a0 - CMatrix::identity(n, n)).norm() > 1e-10 {
        return Err(QError::Contract(
            "product solution needs the regular case A(0) = I".into(),
        ));
    }
    if z.norm() == 0.0 || !z.is_finite() {
        return Err(QError::Domain(format!("product solution needs z in C*, got {z}")));
    }
    guard_unsafe_set(sys, z)?;
    let q = sys.q();
    let mut acc = CMatrix::identity(n, n);
    let mut last_dev = f64::INFINITY;
    for i in 1..=n_factors {
        let factor = sys.eval(z * q.pow_int(-(i as i64)))?;
        last_dev = (&factor - CMatrix::identity(n, n)).norm();
        acc *= factor;
    }
    if last_dev > 1e-9 * acc.norm().max(1.0) {
        return Err(QError::NoConvergence(format!(
            "product factors still deviate by {last_dev:.3e} after {n_factors} terms"
        )));
    }
    Ok(acc)
}
