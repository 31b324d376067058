//! Rational-function matrix systems sigma_q X = A X: polynomial and rational
//! arithmetic with numerically reduced fractions, evaluation at 0, infinity
//! and in C*, gauge transformation, fuchsian predicates, the singular locus
//! S(A), resonance detection among exponents, and shearing normalization to
//! a non-resonant form with fundamental-annulus exponents.

use crate::error::{QError, Result};
use crate::matfun::dunford;
use crate::qcore::{annulus_decompose, QParameter};
use crate::{C64, CMatrix};

/// Complex polynomial, coefficients ascending in degree. The zero polynomial
/// is the empty list; construction trims trailing coefficients that are
/// negligible against the largest one.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<C64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<C64>) -> Self {
        let scale = coeffs.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        let cut = 1e-12 * scale;
        while let Some(last) = coeffs.last() {
            if last.norm() <= cut {
                coeffs.pop();
            } else {
                break;
            }
        }
        Polynomial { coeffs }
    }

    pub fn zero() -> Self {
        Polynomial { coeffs: Vec::new() }
    }

    pub fn one() -> Self {
        Polynomial::constant(C64::new(1.0, 0.0))
    }

    pub fn constant(c: C64) -> Self {
        Polynomial::new(vec![c])
    }

    /// z^k with coefficient one.
    pub fn monomial(k: usize) -> Self {
        let mut coeffs = vec![C64::new(0.0, 0.0); k + 1];
        coeffs[k] = C64::new(1.0, 0.0);
        Polynomial { coeffs }
    }

    /// Monic polynomial with the given roots.
    pub fn from_roots(roots: &[C64]) -> Self {
        let mut p = Polynomial::one();
        for &r in roots {
            p = p.mul(&Polynomial::new(vec![-r, C64::new(1.0, 0.0)]));
        }
        p
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn degree(&self) -> Option<usize> {
        if self.coeffs.is_empty() {
            None
        } else {
            Some(self.coeffs.len() - 1)
        }
    }

    pub fn coeff(&self, k: usize) -> C64 {
        self.coeffs.get(k).copied().unwrap_or(C64::new(0.0, 0.0))
    }

    pub fn eval(&self, z: C64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for &c in self.coeffs.iter().rev() {
            acc = acc * z + c;
        }
        acc
    }

    /// Magnitude scale of the value at z, used to decide whether eval(z) is
    /// a genuine zero rather than cancellation noise.
    pub fn eval_scale(&self, z: C64) -> f64 {
        let mut acc = 0.0f64;
        let mut zp = 1.0f64;
        for c in &self.coeffs {
            acc += c.norm() * zp;
            zp *= z.norm();
        }
        acc.max(f64::MIN_POSITIVE)
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut coeffs = Vec::with_capacity(n);
        for k in 0..n {
            coeffs.push(self.coeff(k) + other.coeff(k));
        }
        Polynomial::new(coeffs)
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: C64) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|&a| a * c).collect())
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        if self.is_zero() || other.is_zero() {
            return Polynomial::zero();
        }
        let mut coeffs = vec![C64::new(0.0, 0.0); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Polynomial::new(coeffs)
    }

    /// p(qz): the k-th coefficient picks up q^k.
    pub fn compose_qz(&self, q: &QParameter) -> Polynomial {
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| c * q.pow_int(k as i64))
                .collect(),
        )
    }

    /// Quotient of division by (z - r); the remainder p(r) is discarded, so
    /// this is only exact when r is a root.
    pub fn divide_out_root(&self, r: C64) -> Polynomial {
        let n = self.coeffs.len();
        if n <= 1 {
            return Polynomial::zero();
        }
        let mut quot = vec![C64::new(0.0, 0.0); n - 1];
        let mut carry = C64::new(0.0, 0.0);
        for k in (0..n - 1).rev() {
            carry = self.coeffs[k + 1] + carry * r;
            quot[k] = carry;
        }
        Polynomial::new(quot)
    }

    /// All roots with multiplicity, via companion-matrix eigenvalues
    /// clustered at relative tolerance 1e-6. Leading coefficients that are
    /// negligible against the largest one are treated as structurally zero,
    /// so their roots come back as exact zeros instead of Schur noise.
    pub fn roots(&self) -> Result<Vec<(C64, usize)>> {
        if self.degree().is_none() {
            return Ok(Vec::new());
        }
        let scale = self.coeffs.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        let at_origin = self
            .coeffs
            .iter()
            .take_while(|c| c.norm() <= 1e-12 * scale)
            .count();
        let reduced = &self.coeffs[at_origin..];
        let mut out = Vec::new();
        if at_origin > 0 {
            out.push((C64::new(0.0, 0.0), at_origin));
        }
        let deg = reduced.len() - 1;
        if deg == 0 {
            return Ok(out);
        }
        let lead = reduced[deg];
        let mut comp = CMatrix::zeros(deg, deg);
        for i in 1..deg {
            comp[(i, i - 1)] = C64::new(1.0, 0.0);
        }
        for i in 0..deg {
            comp[(i, deg - 1)] = -reduced[i] / lead;
        }
        let (_, t) = comp.schur().unpack();
        let eigs: Vec<C64> = t.diagonal().iter().copied().collect();
        if eigs.iter().any(|e| !e.is_finite()) {
            return Err(QError::NoConvergence(
                "companion-matrix eigenvalue iteration produced non-finite roots".into(),
            ));
        }
        out.extend(cluster_points(&eigs, 1e-6));
        Ok(out)
    }

    /// Division by (z - r) when r is a root within coefficient-level noise:
    /// returns the quotient when the remainder p(r) is negligible against
    /// the quotient's coefficients.
    fn try_divide_out_root(&self, r: C64) -> Option<Polynomial> {
        if self.is_zero() {
            return None;
        }
        let quot = self.divide_out_root(r);
        let qscale = quot
            .coeffs()
            .iter()
            .map(|c| c.norm())
            .fold(f64::MIN_POSITIVE, f64::max);
        let remainder = self.eval(r);
        if remainder.norm() <= 1e-8 * qscale * r.norm().max(1.0) {
            Some(quot)
        } else {
            None
        }
    }
}

/// Group nearby points, relative tolerance against the largest magnitude.
fn cluster_points(points: &[C64], rel_tol: f64) -> Vec<(C64, usize)> {
    let scale = points.iter().map(|p| p.norm()).fold(1.0f64, f64::max);
    let mut clusters: Vec<(C64, usize)> = Vec::new();
    for &p in points {
        match clusters
            .iter_mut()
            .find(|(c, m)| (*c / *m as f64 - p).norm() <= rel_tol * scale)
        {
            Some((c, m)) => {
                *c += p;
                *m += 1;
            }
            None => clusters.push((p, 1)),
        }
    }
    clusters
        .into_iter()
        .map(|(sum, m)| (sum / m as f64, m))
        .collect()
}

/// Quotient of complex polynomials, kept co-prime by root matching at
/// relative tolerance 1e-8 and with a monic denominator.
#[derive(Debug, Clone)]
pub struct RationalFunction {
    num: Polynomial,
    den: Polynomial,
}

impl RationalFunction {
    pub fn new(num: Polynomial, den: Polynomial) -> Result<Self> {
        if den.is_zero() {
            return Err(QError::Contract(
                "rational function with identically zero denominator".into(),
            ));
        }
        let mut rf = RationalFunction { num, den };
        rf.reduce()?;
        Ok(rf)
    }

    pub fn from_poly(p: Polynomial) -> Self {
        RationalFunction {
            num: p,
            den: Polynomial::one(),
        }
    }

    pub fn constant(c: C64) -> Self {
        RationalFunction::from_poly(Polynomial::constant(c))
    }

    pub fn zero() -> Self {
        RationalFunction::from_poly(Polynomial::zero())
    }

    pub fn one() -> Self {
        RationalFunction::from_poly(Polynomial::one())
    }

    pub fn num(&self) -> &Polynomial {
        &self.num
    }

    pub fn den(&self) -> &Polynomial {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    fn reduce(&mut self) -> Result<()> {
        if self.num.is_zero() {
            self.den = Polynomial::one();
            return Ok(());
        }
        // Divide out every common root, found on the denominator and matched
        // on the numerator at relative 1e-8.
        let den_roots = self.den.roots()?;
        for (root, mult) in den_roots {
            for _ in 0..mult {
                match (
                    self.num.try_divide_out_root(root),
                    self.den.try_divide_out_root(root),
                ) {
                    (Some(n), Some(d)) if !d.is_zero() => {
                        self.num = n;
                        self.den = d;
                    }
                    _ => break,
                }
            }
        }
        let lead = *self.den.coeffs().last().expect("nonzero denominator");
        self.den = self.den.scale(C64::new(1.0, 0.0) / lead);
        self.num = self.num.scale(C64::new(1.0, 0.0) / lead);
        Ok(())
    }

    pub fn add(&self, other: &RationalFunction) -> Result<RationalFunction> {
        RationalFunction::new(
            self.num.mul(&other.den).add(&other.num.mul(&self.den)),
            self.den.mul(&other.den),
        )
    }

    pub fn sub(&self, other: &RationalFunction) -> Result<RationalFunction> {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn mul(&self, other: &RationalFunction) -> Result<RationalFunction> {
        RationalFunction::new(self.num.mul(&other.num), self.den.mul(&other.den))
    }

    pub fn div(&self, other: &RationalFunction) -> Result<RationalFunction> {
        if other.is_zero() {
            return Err(QError::Domain("division by the zero rational function".into()));
        }
        RationalFunction::new(self.num.mul(&other.den), self.den.mul(&other.num))
    }

    pub fn scale(&self, c: C64) -> RationalFunction {
        RationalFunction {
            num: self.num.scale(c),
            den: self.den.clone(),
        }
    }

    pub fn eval(&self, z: C64) -> Result<C64> {
        let d = self.den.eval(z);
        if d.norm() <= 1e-12 * self.den.eval_scale(z) {
            return Err(QError::PoleProximity {
                what: "rational function evaluated at a pole".into(),
                near: z,
            });
        }
        Ok(self.num.eval(z) / d)
    }

    /// Value at 0, or None when 0 is a pole.
    pub fn at_zero(&self) -> Option<C64> {
        let d0 = self.den.coeff(0);
        let scale = self
            .den
            .coeffs()
            .iter()
            .map(|c| c.norm())
            .fold(0.0f64, f64::max);
        if d0.norm() <= 1e-12 * scale {
            None
        } else {
            Some(self.num.coeff(0) / d0)
        }
    }

    /// Finite limit at infinity, or None when the degree of the numerator
    /// exceeds that of the denominator.
    pub fn at_infty(&self) -> Option<C64> {
        match (self.num.degree(), self.den.degree()) {
            (None, _) => Some(C64::new(0.0, 0.0)),
            (Some(dn), Some(dd)) => {
                if dn > dd {
                    None
                } else if dn < dd {
                    Some(C64::new(0.0, 0.0))
                } else {
                    Some(self.num.coeff(dn) / self.den.coeff(dd))
                }
            }
            (Some(_), None) => unreachable!("denominator is never the zero polynomial"),
        }
    }

    pub fn compose_qz(&self, q: &QParameter) -> Result<RationalFunction> {
        RationalFunction::new(self.num.compose_qz(q), self.den.compose_qz(q))
    }

    /// The same function written in the coordinate w = 1/z.
    pub fn in_w(&self) -> Result<RationalFunction> {
        let d = self
            .num
            .degree()
            .unwrap_or(0)
            .max(self.den.degree().unwrap_or(0));
        let lift = |p: &Polynomial| {
            let mut coeffs = vec![C64::new(0.0, 0.0); d + 1];
            for k in 0..=d {
                coeffs[d - k] = p.coeff(k);
            }
            Polynomial::new(coeffs)
        };
        RationalFunction::new(lift(&self.num), lift(&self.den))
    }

    /// Taylor coefficients at 0 through order k_max, by series division.
    pub fn taylor_at_zero(&self, k_max: usize) -> Result<Vec<C64>> {
        let d0 = self.den.coeff(0);
        let scale = self
            .den
            .coeffs()
            .iter()
            .map(|c| c.norm())
            .fold(0.0f64, f64::max);
        if d0.norm() <= 1e-12 * scale {
            return Err(QError::Domain(
                "Taylor expansion at a pole of the rational function".into(),
            ));
        }
        let mut out = Vec::with_capacity(k_max + 1);
        for k in 0..=k_max {
            let mut acc = self.num.coeff(k);
            for j in 1..=k {
                acc -= self.den.coeff(j) * out[k - j];
            }
            out.push(acc / d0);
        }
        Ok(out)
    }
}

/// Square matrix of rational functions, row-major entries.
#[derive(Debug, Clone)]
pub struct RationalMatrix {
    n: usize,
    entries: Vec<RationalFunction>,
}

impl RationalMatrix {
    pub fn from_entries(n: usize, entries: Vec<RationalFunction>) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(QError::Contract(format!(
                "rational matrix needs n^2 entries, got {} for n = {n}",
                entries.len()
            )));
        }
        Ok(RationalMatrix { n, entries })
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(if i == j {
                    RationalFunction::one()
                } else {
                    RationalFunction::zero()
                });
            }
        }
        RationalMatrix { n, entries }
    }

    /// Constant matrix from numeric entries.
    pub fn constant(m: &CMatrix) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(QError::Contract("constant gauge must be square".into()));
        }
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(RationalFunction::constant(m[(i, j)]));
            }
        }
        Ok(RationalMatrix { n, entries })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> &RationalFunction {
        &self.entries[i * self.n + j]
    }

    pub fn set_entry(&mut self, i: usize, j: usize, f: RationalFunction) {
        self.entries[i * self.n + j] = f;
    }

    pub fn mul(&self, other: &RationalMatrix) -> Result<RationalMatrix> {
        if self.n != other.n {
            return Err(QError::Contract("rational matrix size mismatch".into()));
        }
        let mut entries = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let mut acc = RationalFunction::zero();
                for k in 0..self.n {
                    acc = acc.add(&self.entry(i, k).mul(other.entry(k, j))?)?;
                }
                entries.push(acc);
            }
        }
        Ok(RationalMatrix {
            n: self.n,
            entries,
        })
    }

    pub fn compose_qz(&self, q: &QParameter) -> Result<RationalMatrix> {
        let mut entries = Vec::with_capacity(self.n * self.n);
        for e in &self.entries {
            entries.push(e.compose_qz(q)?);
        }
        Ok(RationalMatrix {
            n: self.n,
            entries,
        })
    }

    /// Determinant by cofactor expansion; fine for the n <= 4 in scope.
    pub fn det(&self) -> Result<RationalFunction> {
        if self.n == 1 {
            return Ok(self.entry(0, 0).clone());
        }
        let mut acc = RationalFunction::zero();
        for j in 0..self.n {
            let mut term = self.entry(0, j).mul(&self.minor(0, j)?.det()?)?;
            if j % 2 == 1 {
                term = term.scale(C64::new(-1.0, 0.0));
            }
            acc = acc.add(&term)?;
        }
        Ok(acc)
    }

    fn minor(&self, row: usize, col: usize) -> Result<RationalMatrix> {
        let mut entries = Vec::with_capacity((self.n - 1) * (self.n - 1));
        for i in 0..self.n {
            if i == row {
                continue;
            }
            for j in 0..self.n {
                if j == col {
                    continue;
                }
                entries.push(self.entry(i, j).clone());
            }
        }
        RationalMatrix::from_entries(self.n - 1, entries)
    }

    /// Inverse through the adjugate. Errors when det is identically zero.
    pub fn inverse(&self) -> Result<RationalMatrix> {
        let det = self.det()?;
        if det.is_zero() {
            return Err(QError::Domain(
                "rational matrix has identically zero determinant".into(),
            ));
        }
        if self.n == 1 {
            return Ok(RationalMatrix {
                n: 1,
                entries: vec![RationalFunction::one().div(&det)?],
            });
        }
        let mut entries = vec![RationalFunction::zero(); self.n * self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                let mut cof = self.minor(i, j)?.det()?;
                if (i + j) % 2 == 1 {
                    cof = cof.scale(C64::new(-1.0, 0.0));
                }
                // Adjugate transposes the cofactor matrix.
                entries[j * self.n + i] = cof.div(&det)?;
            }
        }
        Ok(RationalMatrix {
            n: self.n,
            entries,
        })
    }

    pub fn eval(&self, z: C64) -> Result<CMatrix> {
        let mut m = CMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = self.entry(i, j).eval(z)?;
            }
        }
        Ok(m)
    }

    pub fn at_zero(&self) -> Option<CMatrix> {
        let mut m = CMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = self.entry(i, j).at_zero()?;
            }
        }
        Some(m)
    }

    pub fn at_infty(&self) -> Option<CMatrix> {
        let mut m = CMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = self.entry(i, j).at_infty()?;
            }
        }
        Some(m)
    }
}

/// Where a local statement is anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasePoint {
    Zero,
    Infinity,
}

impl std::fmt::Display for BasePoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasePoint::Zero => write!(f, "0"),
            BasePoint::Infinity => write!(f, "infinity"),
        }
    }
}

/// A q-difference system sigma_q X = A X with A an invertible matrix of
/// rational functions.
#[derive(Debug, Clone)]
pub struct RationalMatrixSystem {
    mat: RationalMatrix,
    q: QParameter,
}

/// Singular locus S(A) = {poles of A} union {zeros of det A}, with points in
/// C* listed with multiplicity; 0 and infinity are flagged separately.
#[derive(Debug, Clone)]
pub struct SingularLocus {
    pub points: Vec<(C64, usize)>,
    pub at_zero: bool,
    pub at_infinity: bool,
}

impl SingularLocus {
    /// Smallest modulus among the C* points, if any.
    pub fn min_modulus(&self) -> Option<f64> {
        self.points
            .iter()
            .map(|(p, _)| p.norm())
            .min_by(|a, b| a.partial_cmp(b).unwrap())
    }

    pub fn max_modulus(&self) -> Option<f64> {
        self.points
            .iter()
            .map(|(p, _)| p.norm())
            .max_by(|a, b| a.partial_cmp(b).unwrap())
    }
}

impl RationalMatrixSystem {
    pub fn new(q: QParameter, mat: RationalMatrix) -> Result<Self> {
        if mat.det()?.is_zero() {
            return Err(QError::Contract(
                "system matrix must lie in GL_n(C(z)): det A is identically zero".into(),
            ));
        }
        Ok(RationalMatrixSystem { mat, q })
    }

    pub fn q(&self) -> &QParameter {
        &self.q
    }

    pub fn matrix(&self) -> &RationalMatrix {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.dim()
    }

    pub fn eval(&self, z: C64) -> Result<CMatrix> {
        self.mat.eval(z)
    }

    /// Constant form at a base point; errors if a pole sits there.
    pub fn value_at(&self, at: BasePoint) -> Result<CMatrix> {
        let v = match at {
            BasePoint::Zero => self.mat.at_zero(),
            BasePoint::Infinity => self.mat.at_infty(),
        };
        v.ok_or_else(|| QError::Domain(format!("system has a pole at {at}")))
    }

    /// Taylor coefficients of A at the base point (in w = 1/z at infinity).
    pub fn taylor_at(&self, at: BasePoint, k_max: usize) -> Result<Vec<CMatrix>> {
        let n = self.dim();
        let mut per_entry: Vec<Vec<C64>> = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let f = match at {
                    BasePoint::Zero => self.mat.entry(i, j).clone(),
                    BasePoint::Infinity => self.mat.entry(i, j).in_w()?,
                };
                per_entry.push(f.taylor_at_zero(k_max)?);
            }
        }
        let mut out = Vec::with_capacity(k_max + 1);
        for k in 0..=k_max {
            out.push(CMatrix::from_fn(n, n, |i, j| per_entry[i * n + j][k]));
        }
        Ok(out)
    }

    /// Strict fuchsian test: A(0) and A(infinity) finite and invertible.
    /// Returns diagnostics naming what failed.
    pub fn is_strictly_fuchsian(&self) -> (bool, Vec<String>) {
        let mut notes = Vec::new();
        for at in [BasePoint::Zero, BasePoint::Infinity] {
            let value = match at {
                BasePoint::Zero => self.mat.at_zero(),
                BasePoint::Infinity => self.mat.at_infty(),
            };
            match value {
                None => notes.push(format!("pole at {at}")),
                Some(m) => {
                    let det = m.determinant();
                    let scale = m.norm().max(1.0).powi(self.dim() as i32);
                    if det.norm() <= 1e-10 * scale {
                        notes.push(format!("A({at}) is singular (|det| = {:.3e})", det.norm()));
                    }
                }
            }
        }
        (notes.is_empty(), notes)
    }

    /// S(A): poles of entries and zeros of det A. C*-points carry the larger
    /// of pole order and det-zero order when both occur.
    pub fn singular_locus(&self) -> Result<SingularLocus> {
        let n = self.dim();
        let mut raw: Vec<(C64, usize)> = Vec::new();
        let mut at_zero = false;
        let mut at_infinity = false;

        for i in 0..n {
            for j in 0..n {
                for (root, mult) in self.mat.entry(i, j).den().roots()? {
                    if root.norm() <= 1e-12 {
                        at_zero = true;
                    } else {
                        raw.push((root, mult));
                    }
                }
                if self.mat.entry(i, j).at_infty().is_none() {
                    at_infinity = true;
                }
            }
        }

        let det = self.mat.det()?;
        for (root, mult) in det.num().roots()? {
            if root.norm() <= 1e-12 {
                at_zero = true;
            } else {
                raw.push((root, mult));
            }
        }
        match det.at_infty() {
            None => {}
            Some(v) if v.norm() <= 1e-12 => at_infinity = true,
            Some(_) => {}
        }
        if det.num().coeff(0).norm() <= 1e-12
            && det
                .num()
                .coeffs()
                .iter()
                .map(|c| c.norm())
                .fold(0.0f64, f64::max)
                > 0.0
        {
            // det vanishing at the origin is already caught by its roots,
            // but guard against the constant-free polynomial edge.
            at_zero = at_zero || det.at_zero().map(|v| v.norm() <= 1e-12).unwrap_or(true);
        }

        // Merge nearby points, keeping the larger multiplicity.
        let scale = raw.iter().map(|(p, _)| p.norm()).fold(1.0f64, f64::max);
        let mut points: Vec<(C64, usize)> = Vec::new();
        for (p, m) in raw {
            match points
                .iter_mut()
                .find(|(c, _)| (*c - p).norm() <= 1e-6 * scale)
            {
                Some((_, m0)) => *m0 = (*m0).max(m),
                None => points.push((p, m)),
            }
        }
        Ok(SingularLocus {
            points,
            at_zero,
            at_infinity,
        })
    }
}

/// Gauge action: A goes to F(qz)^{-1} A(z) F(z), exact rational arithmetic.
pub fn gauge_transform(
    sys: &RationalMatrixSystem,
    f: &RationalMatrix,
) -> Result<RationalMatrixSystem> {
    if f.dim() != sys.dim() {
        return Err(QError::Contract("gauge matrix size mismatch".into()));
    }
    if f.det()?.is_zero() {
        return Err(QError::Domain(
            "gauge matrix has identically zero determinant".into(),
        ));
    }
    let f_qz_inv = f.compose_qz(sys.q())?.inverse()?;
    let mat = f_qz_inv.mul(sys.matrix())?.mul(f)?;
    RationalMatrixSystem::new(sys.q().clone(), mat)
}

/// All resonant pairs among the eigenvalues of A0: (i, j, k) with
/// c_i = q^k c_j, k nonzero, within relative tolerance 1e-8. Eigenvalues
/// that coincide are not resonant (only distinct exponents count).
pub fn resonance_classes(
    a0: &CMatrix,
    q: &QParameter,
    max_shift: i64,
) -> Result<Vec<(usize, usize, i64)>> {
    let (_, t) = a0.clone().schur().unpack();
    let eigs: Vec<C64> = t.diagonal().iter().copied().collect();
    let norms: Vec<f64> = eigs.iter().map(|e| e.norm()).collect();
    let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = norms.iter().cloned().fold(0.0f64, f64::max);
    if lo <= 0.0 {
        return Err(QError::Domain(
            "resonance scan needs an invertible matrix; eigenvalue ~ 0".into(),
        ));
    }
    let bound = (hi / lo).ln() / q.q().norm().ln();
    if (max_shift as f64) < bound - 1e-9 {
        return Err(QError::Contract(format!(
            "max_shift {max_shift} is below the spectral-ratio bound {bound:.3}"
        )));
    }
    let mut out = Vec::new();
    for i in 0..eigs.len() {
        for j in 0..eigs.len() {
            if i == j {
                continue;
            }
            if (eigs[i] - eigs[j]).norm() <= 1e-8 * hi {
                continue; // equal exponents, not a resonance
            }
            for k in 1..=max_shift {
                for sk in [k, -k] {
                    let shifted = q.pow_int(sk) * eigs[j];
                    if (eigs[i] - shifted).norm() <= 1e-8 * eigs[i].norm().max(shifted.norm()) {
                        out.push((i, j, sk));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Deterministic auxiliary point for shearing gauges: away from the unit
/// circle edges of the annulus and rotated off the given singular rays.
fn shearing_anchor(q: &QParameter, avoid: &[C64]) -> C64 {
    let r = q.q().norm().sqrt();
    let mut z0 = C64::from_polar(r, std::f64::consts::PI / 5.0);
    let rot = C64::from_polar(1.0, std::f64::consts::PI / 7.0);
    for _ in 0..64 {
        let ok = avoid.iter().all(|&s| {
            if s.norm() <= 1e-12 {
                return true;
            }
            // Compare against the whole q-spiral of s.
            let steps = (z0.norm().ln() - s.norm().ln()) / q.q().norm().ln();
            let lo = steps.floor() as i64 - 1;
            let mut clear = true;
            for k in lo..=lo + 2 {
                let on_level = s * q.pow_int(k);
                if (z0 - on_level).norm() <= 1e-2 * z0.norm().max(on_level.norm()) {
                    clear = false;
                }
            }
            clear
        });
        if ok {
            return z0;
        }
        z0 *= rot;
    }
    z0
}

/// Shear A once at the base point: multiply the exponents of the selected
/// eigenvalue clusters by q^{-1} (sign +1) or q (sign -1) while leaving the
/// opposite base point's constant form untouched. The gauge block for a
/// sheared cluster is (z/(z-z0))^s at 0 and (1 - z/z0)^s at infinity, which
/// behaves like z^s (respectively (1/w)^{-s}) locally and tends to 1 at the
/// other end.
fn shearing_step(
    sys: &RationalMatrixSystem,
    at: BasePoint,
    shear: &[bool],
    sign: i64,
    basis: &CMatrix,
    z0: C64,
) -> Result<(RationalMatrixSystem, RationalMatrix)> {
    let n = sys.dim();
    let local = |m: i64| -> Result<RationalFunction> {
        let one = RationalFunction::one();
        if m == 0 {
            return Ok(one);
        }
        let f = match at {
            // z / (z - z0)
            BasePoint::Zero => RationalFunction::new(
                Polynomial::monomial(1),
                Polynomial::new(vec![-z0, C64::new(1.0, 0.0)]),
            )?,
            // 1 - z/z0
            BasePoint::Infinity => RationalFunction::from_poly(Polynomial::new(vec![
                C64::new(1.0, 0.0),
                -C64::new(1.0, 0.0) / z0,
            ])),
        };
        if m > 0 {
            Ok(f)
        } else {
            one.div(&f)
        }
    };

    let mut diag = RationalMatrix::identity(n);
    for (idx, &s) in shear.iter().enumerate() {
        if s {
            diag.set_entry(idx, idx, local(sign)?);
        }
    }
    let q_mat = RationalMatrix::constant(basis)?;
    let q_inv = RationalMatrix::constant(
        &basis
            .clone()
            .try_inverse()
            .ok_or_else(|| QError::Ambiguous("shearing basis is numerically singular".into()))?,
    )?;
    let f = q_mat.mul(&diag)?.mul(&q_inv)?;
    let transformed = gauge_transform(sys, &f)?;
    Ok((transformed, f))
}

/// Normalize a strictly fuchsian system at the chosen base point: the output
/// has all exponents there inside the fundamental annulus and no resonant
/// pair, and equals gauge_transform(A, F) for the returned F. Exponents move
/// only by integer q-powers, and the opposite base point's constant form is
/// preserved exactly by the localized shearing blocks.
pub fn normalize_nonresonant(
    sys: &RationalMatrixSystem,
    at: BasePoint,
) -> Result<(RationalMatrixSystem, RationalMatrix)> {
    let (ok, notes) = sys.is_strictly_fuchsian();
    if !ok {
        return Err(QError::Contract(format!(
            "normalization needs a strictly fuchsian system: {}",
            notes.join("; ")
        )));
    }
    let q = sys.q().clone();
    let n = sys.dim();

    let initial = sys.value_at(at)?;
    let initial_pair = dunford(&initial)?;
    let mut budget: i64 = 4;
    for &(value, _) in initial_pair.clusters() {
        budget += annulus_decompose(&q, value)?.epsilon.abs();
    }

    let mut current = sys.clone();
    let mut f_total = RationalMatrix::identity(n);

    for _ in 0..budget {
        let a0 = current.value_at(at)?;
        let pair = dunford(&a0)?;
        let mut eps: Vec<i64> = Vec::new();
        for &(value, _) in pair.clusters() {
            eps.push(annulus_decompose(&q, value)?.epsilon);
        }

        if eps.iter().all(|&e| e == 0) {
            // Exponents in the annulus; boundary cases can still resonate at
            // shift 1, in which case one more shearing pass is needed.
            let res = resonance_classes(&a0, &q, 2)?;
            if res.is_empty() {
                return Ok((current, f_total));
            }
            // Shear the cluster holding the larger member of the first
            // resonant pair down by one level.
            let eigs_of = |idx: usize| -> C64 {
                let (_, t) = a0.clone().schur().unpack();
                t.diagonal()[idx]
            };
            let (i, j, k) = res[0];
            let big = if k > 0 { eigs_of(i) } else { eigs_of(j) };
            let shear: Vec<bool> = pair
                .clusters()
                .iter()
                .map(|&(value, _)| (value - big).norm() <= 1e-8 * big.norm().max(1.0))
                .collect();
            if !shear.iter().any(|&s| s) {
                return Err(QError::Ambiguous(
                    "resonant exponent does not match any eigenvalue cluster".into(),
                ));
            }
            let locus = current.singular_locus()?;
            let avoid: Vec<C64> = locus.points.iter().map(|&(p, _)| p).collect();
            let z0 = shearing_anchor(&q, &avoid);
            let (next, f_step) = shearing_step(&current, at, &shear, 1, pair.basis_matrix(), z0)?;
            current = next;
            f_total = f_total.mul(&f_step)?;
            continue;
        }

        // One sign class per pass: mixing +1 and -1 shifts in a single gauge
        // would need quadratic vanishing of the off-diagonal blocks.
        let sign = if eps.iter().any(|&e| e > 0) { 1 } else { -1 };
        let shear: Vec<bool> = eps.iter().map(|&e| e.signum() == sign).collect();
        let locus = current.singular_locus()?;
        let avoid: Vec<C64> = locus.points.iter().map(|&(p, _)| p).collect();
        let z0 = shearing_anchor(&q, &avoid);
        let (next, f_step) = shearing_step(&current, at, &shear, sign, pair.basis_matrix(), z0)?;
        current = next;
        f_total = f_total.mul(&f_step)?;
    }

    Err(QError::Ambiguous(
        "shearing did not reach a non-resonant annulus-normalized form within its budget; \
         exponent configuration cycles"
            .into(),
    ))
}
