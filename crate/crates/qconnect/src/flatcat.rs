//! Flat objects: constant invertible matrices viewed as q-difference systems
//! sigma_q X = A X. This module carries their Laurent-polynomial morphism
//! spaces, the incarnated local Galois action A^{(gamma, lambda)} =
//! gamma(A_s) A_u^lambda, naturality and tensor-compatibility residuals, the
//! Jordan-block tensor plethysm, and the eigenline fixing criterion behind
//! the density statements.

use std::collections::BTreeMap;
use std::ops::Mul;

use crate::error::{QError, Result};
use crate::matfun::{dunford, eye, kron, unipotent_pow, DunfordPair};
use crate::qcore::{
    annulus_decompose, char_eval, AnnulusDecomposition, CharacterSpec, QParameter,
};
use crate::{C64, CMatrix};

/// A constant invertible matrix together with its multiplicative Dunford
/// decomposition and the annulus decompositions of the semisimple spectrum,
/// all validated against each other on construction.
#[derive(Debug, Clone)]
pub struct FlatObject {
    q: QParameter,
    a: CMatrix,
    dunford: DunfordPair,
    annulus_spectrum: Vec<AnnulusDecomposition>,
}

impl FlatObject {
    pub fn new(q: QParameter, a: CMatrix) -> Result<Self> {
        let pair = dunford(&a)?;
        let recon = (pair.product() - &a).norm();
        if recon > 1e-9 * a.norm().max(1.0) {
            return Err(QError::Ambiguous(format!(
                "Dunford parts reproduce the matrix only to {recon:.3e}; \
                 flat object cache would be inconsistent"
            )));
        }
        let mut annulus_spectrum = Vec::with_capacity(pair.clusters().len());
        for &(value, _) in pair.clusters() {
            let dec = annulus_decompose(&q, value)?;
            let back = q.pow_int(dec.epsilon) * dec.reduced;
            if (back - value).norm() > 1e-9 * value.norm() {
                return Err(QError::Ambiguous(format!(
                    "annulus decomposition of exponent {value} does not recombine"
                )));
            }
            annulus_spectrum.push(dec);
        }
        Ok(FlatObject {
            q,
            a,
            dunford: pair,
            annulus_spectrum,
        })
    }

    pub fn q(&self) -> &QParameter {
        &self.q
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.a
    }

    pub fn dunford(&self) -> &DunfordPair {
        &self.dunford
    }

    /// Annulus decompositions aligned with dunford().clusters().
    pub fn annulus_spectrum(&self) -> &[AnnulusDecomposition] {
        &self.annulus_spectrum
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Kronecker product object X (x) Y.
    pub fn tensor(&self, other: &FlatObject) -> Result<FlatObject> {
        if (self.q.q() - other.q.q()).norm() > 1e-12 * self.q.q().norm() {
            return Err(QError::Contract(
                "tensor product needs flat objects over the same q".into(),
            ));
        }
        FlatObject::new(self.q.clone(), kron(&self.a, &other.a))
    }
}

/// An element (gamma, lambda) acting on flat objects as gamma(A_s) A_u^lambda.
/// Group elements kill q (gamma(q) = 1); arrows of the groupoid carry
/// gamma(q) = z1/z0 instead and transport between fibers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaloisElement {
    pub gamma: CharacterSpec,
    pub lambda: C64,
}

impl GaloisElement {
    pub fn new(gamma: CharacterSpec, lambda: C64) -> Self {
        GaloisElement { gamma, lambda }
    }

    pub fn identity() -> Self {
        GaloisElement::new(CharacterSpec::identity(), C64::new(0.0, 0.0))
    }

    /// Whether gamma kills q, so the element acts within a single fiber.
    pub fn is_group_element(&self) -> bool {
        self.gamma.is_group_element(1e-10)
    }
}

impl Mul for GaloisElement {
    type Output = GaloisElement;

    fn mul(self, rhs: GaloisElement) -> GaloisElement {
        GaloisElement::new(self.gamma * rhs.gamma, self.lambda + rhs.lambda)
    }
}

/// A finite Laurent polynomial with matrix coefficients, F(z) = sum F_k z^k.
#[derive(Debug, Clone)]
pub struct LaurentMatrixMorphism {
    terms: BTreeMap<i64, CMatrix>,
}

impl LaurentMatrixMorphism {
    pub fn from_terms(terms: BTreeMap<i64, CMatrix>) -> Self {
        LaurentMatrixMorphism { terms }
    }

    pub fn single(k: i64, f: CMatrix) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(k, f);
        LaurentMatrixMorphism { terms }
    }

    pub fn terms(&self) -> &BTreeMap<i64, CMatrix> {
        &self.terms
    }

    pub fn eval(&self, z: C64) -> Result<CMatrix> {
        let (rows, cols) = match self.terms.values().next() {
            Some(f) => f.shape(),
            None => return Err(QError::Contract("empty Laurent morphism".into())),
        };
        if z.norm() == 0.0 && self.terms.keys().any(|&k| k < 0) {
            return Err(QError::Domain(
                "Laurent morphism with negative terms evaluated at 0".into(),
            ));
        }
        let mut acc = CMatrix::zeros(rows, cols);
        for (&k, f) in &self.terms {
            acc += f * z.powi(k as i32);
        }
        Ok(acc)
    }

    /// Residual of the defining equation ||F(qz) A - B F(z)|| at one point.
    pub fn intertwining_residual(
        &self,
        a: &FlatObject,
        b: &FlatObject,
        z: C64,
    ) -> Result<f64> {
        let lhs = self.eval(a.q().q() * z)? * a.matrix();
        let rhs = b.matrix() * self.eval(z)?;
        Ok((lhs - rhs).norm())
    }
}

/// Degree range that can carry morphisms from A to B: all k with |q|^k
/// between min|Sp(B)|/max|Sp(A)| and max|Sp(B)|/min|Sp(A)|. May be empty
/// (lo > hi) when the spectra never meet on any q-level.
pub fn hom_window(a: &FlatObject, b: &FlatObject) -> (i64, i64) {
    let norms = |x: &FlatObject| {
        let ns: Vec<f64> = x
            .dunford()
            .clusters()
            .iter()
            .map(|(v, _)| v.norm())
            .collect();
        (
            ns.iter().cloned().fold(f64::INFINITY, f64::min),
            ns.iter().cloned().fold(0.0f64, f64::max),
        )
    };
    let (a_min, a_max) = norms(a);
    let (b_min, b_max) = norms(b);
    let lq = a.q().ln_abs_q();
    let lo = ((b_min / a_max).ln() / lq - 1e-9).ceil() as i64;
    let hi = ((b_max / a_min).ln() / lq + 1e-9).floor() as i64;
    (lo, hi)
}

/// Basis of the morphism space Hom(A, B): all Laurent F with F(qz) A = B F(z),
/// found degree by degree as null spaces of q^k (I (x) A^T) - (B (x) I).
/// The window must cover the spectral bound from hom_window.
pub fn hom_space(
    a: &FlatObject,
    b: &FlatObject,
    window: (i64, i64),
) -> Result<Vec<LaurentMatrixMorphism>> {
    if (a.q().q() - b.q().q()).norm() > 1e-12 * a.q().q().norm() {
        return Err(QError::Contract(
            "hom space needs flat objects over the same q".into(),
        ));
    }
    let (lo, hi) = window;
    if hi < lo {
        return Err(QError::Contract(format!(
            "degree window ({lo}, {hi}) is empty"
        )));
    }
    if hi - lo > 400 {
        return Err(QError::Contract(format!(
            "degree window ({lo}, {hi}) is unreasonably wide"
        )));
    }
    let (need_lo, need_hi) = hom_window(a, b);
    if need_lo <= need_hi && (lo > need_lo || hi < need_hi) {
        return Err(QError::Contract(format!(
            "degree window ({lo}, {hi}) truncates the spectral bound ({need_lo}, {need_hi})"
        )));
    }
    let q = a.q();
    let na = a.dim();
    let nb = b.dim();
    let mut out = Vec::new();
    for k in lo..=hi {
        // Only degrees where q^k Sp(A) meets Sp(B) can carry solutions.
        let qk = q.pow_int(k);
        let meets = a.dunford().clusters().iter().any(|&(va, _)| {
            b.dunford().clusters().iter().any(|&(vb, _)| {
                (qk * va - vb).norm() <= 1e-6 * (qk * va).norm().max(vb.norm())
            })
        });
        if !meets {
            continue;
        }
        let op = kron(&eye(nb), &a.matrix().transpose()) * qk
            - kron(b.matrix(), &eye(na));
        let svd = op.clone().svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| QError::NoConvergence("SVD of the hom operator failed".into()))?;
        let s_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        for (idx, &sv) in svd.singular_values.iter().enumerate() {
            if sv <= 1e-10 * s_max.max(1.0) {
                let mut v = nalgebra::DVector::zeros(nb * na);
                for r in 0..nb * na {
                    v[r] = v_t[(idx, r)].conj();
                }
                let f = crate::matfun::unvec_col(&v, nb, na);
                out.push(LaurentMatrixMorphism::single(k, f));
            }
        }
    }
    Ok(out)
}

/// The incarnated action: gamma(A_s) A_u^lambda.
pub fn act(g: &GaloisElement, x: &FlatObject) -> Result<CMatrix> {
    let q = x.q().clone();
    let ss = x
        .dunford()
        .apply_scalar(|c| char_eval(&q, &g.gamma, c))?;
    let up = unipotent_pow(x.dunford().unipotent(), g.lambda)?;
    Ok(ss * up)
}

/// Residual of the transport square F(z1) . act(g, A) = act(g, B) . F(z0).
/// The coherent choice is z1 = gamma(q) z0, used when z1 is None; passing a
/// different z1 measures how badly an incoherent fiber assignment fails.
pub fn naturality_check(
    g: &GaloisElement,
    f: &LaurentMatrixMorphism,
    a: &FlatObject,
    b: &FlatObject,
    z0: C64,
    z1: Option<C64>,
) -> Result<f64> {
    let z1 = z1.unwrap_or(g.gamma.value_at_q() * z0);
    let lhs = f.eval(z1)? * act(g, a)?;
    let rhs = act(g, b)? * f.eval(z0)?;
    Ok((lhs - rhs).norm())
}

/// Residual of tensor compatibility: act(g, X (x) Y) vs act(g,X) (x) act(g,Y).
pub fn tensor_compat_check(g: &GaloisElement, x: &FlatObject, y: &FlatObject) -> Result<f64> {
    let xy = x.tensor(y)?;
    let joint = act(g, &xy)?;
    let split = kron(&act(g, x)?, &act(g, y)?);
    Ok((joint - split).norm())
}

/// Jordan block J_m(1): ones on the diagonal and superdiagonal.
fn jordan_one(m: usize) -> CMatrix {
    CMatrix::from_fn(m, m, |i, j| {
        if i == j || j == i + 1 {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

fn svd_rank(m: &CMatrix) -> usize {
    let svd = m.clone().svd(false, false);
    let s_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if s_max == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > 1e-6 * s_max)
        .count()
}

/// Jordan type of J_n(1) (x) J_p(1), block sizes sorted descending, computed
/// from the rank sequence of powers of X - I.
pub fn jordan_tensor_decompose(n: usize, p: usize) -> Result<Vec<usize>> {
    if n == 0 || p == 0 || n > 8 || p > 8 {
        return Err(QError::Contract(format!(
            "Jordan tensor decomposition is scoped to 1 <= n, p <= 8, got ({n}, {p})"
        )));
    }
    let x = kron(&jordan_one(n), &jordan_one(p));
    let dim = n * p;
    let nil = &x - eye(dim);
    // ranks[s] = rank((X-I)^s); blocks of size >= s number ranks[s-1]-ranks[s].
    let mut ranks = vec![dim];
    let mut power = eye(dim);
    loop {
        power = &power * &nil;
        let r = svd_rank(&power);
        ranks.push(r);
        if r == 0 {
            break;
        }
    }
    let ge = |s: usize| -> usize {
        if s >= ranks.len() {
            0
        } else {
            ranks[s - 1] - ranks[s]
        }
    };
    let mut sizes = Vec::new();
    for s in (1..ranks.len()).rev() {
        let exactly = ge(s) - ge(s + 1);
        for _ in 0..exactly {
            sizes.push(s);
        }
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    Ok(sizes)
}

/// Whether the line C x inside a diagonal flat object diag(eigs) is fixed by
/// act((gamma, 0)) for every gamma in the list: each linked pair of support
/// coordinates must satisfy gamma(c_bar_i) = gamma(c_bar_j) within 1e-10.
pub fn eigen_line_condition(
    q: &QParameter,
    eigs: &[C64],
    x: &[C64],
    gammas: &[CharacterSpec],
) -> Result<bool> {
    if eigs.len() != x.len() {
        return Err(QError::Contract(
            "eigenvalue list and vector must have one length".into(),
        ));
    }
    let scale = x.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Err(QError::Domain("the zero vector spans no line".into()));
    }
    let support: Vec<usize> = (0..x.len())
        .filter(|&i| x[i].norm() > 1e-12 * scale)
        .collect();
    for (pos, &i) in support.iter().enumerate() {
        for &j in &support[pos + 1..] {
            let ci = annulus_decompose(q, eigs[i])?.reduced;
            let cj = annulus_decompose(q, eigs[j])?.reduced;
            for gamma in gammas {
                let vi = char_eval(q, gamma, ci)?;
                let vj = char_eval(q, gamma, cj)?;
                if (vi - vj).norm() > 1e-10 * vi.norm().max(1.0) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}
