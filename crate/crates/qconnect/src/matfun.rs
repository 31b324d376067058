//! Matrix functions for q-difference systems: the Kronecker product in the
//! first-index-fastest convention, the multiplicative Dunford decomposition
//! A = A_s A_u, scalar functions of the semisimple part, complex powers of
//! unipotent matrices, the matrix character e_{q,A} and its tensor-defect
//! cocycle Phi, and the Sylvester-type solver for q^k X A - A X = R.

use crate::error::{QError, Result};
use crate::qcore::QParameter;
use crate::theta::{qchar, qlog, SeriesTolerance};
use crate::{C64, CMatrix};

/// Kronecker product with the first index varying fastest: the entry in
/// row i1 + p1 (i2 - 1), column j1 + n1 (j2 - 1) is A[i1,j1] B[i2,j2]
/// for A of size p1 x n1. The basis of the product space is (e_i tensor
/// f_j) ordered with i fastest, so this is the column-major vec convention.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (p1, n1) = a.shape();
    let (p2, n2) = b.shape();
    CMatrix::from_fn(p1 * p2, n1 * n2, |r, c| {
        let i1 = r % p1;
        let i2 = r / p1;
        let j1 = c % n1;
        let j2 = c / n1;
        a[(i1, j1)] * b[(i2, j2)]
    })
}

/// Identity matrix shorthand.
pub fn eye(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Relative eigenvalue gap below which two eigenvalues are treated as equal
/// when forming Dunford clusters.
pub const CLUSTER_GAP: f64 = 1e-8;

/// Multiplicative Dunford decomposition A = A_s A_u = A_u A_s with A_s
/// semisimple, A_u unipotent, both produced in an explicit basis of
/// generalized eigenspaces so scalar functions of A_s stay cheap.
#[derive(Debug, Clone)]
pub struct DunfordPair {
    semisimple: CMatrix,
    unipotent: CMatrix,
    basis: CMatrix,
    basis_inv: CMatrix,
    clusters: Vec<(C64, usize)>,
}

impl DunfordPair {
    pub fn semisimple(&self) -> &CMatrix {
        &self.semisimple
    }

    pub fn unipotent(&self) -> &CMatrix {
        &self.unipotent
    }

    pub fn dim(&self) -> usize {
        self.semisimple.nrows()
    }

    /// Distinct eigenvalues with multiplicities, one entry per cluster.
    pub fn clusters(&self) -> &[(C64, usize)] {
        &self.clusters
    }

    /// Generalized-eigenspace basis; columns are grouped by cluster in the
    /// order clusters() reports them.
    pub fn basis_matrix(&self) -> &CMatrix {
        &self.basis
    }

    /// The matrix the pair was computed from.
    pub fn product(&self) -> CMatrix {
        &self.semisimple * &self.unipotent
    }

    /// f(A_s) for a scalar function f, evaluated on each eigenvalue cluster
    /// in the generalized-eigenspace basis. The result commutes with A_u.
    pub fn apply_scalar<F>(&self, mut f: F) -> Result<CMatrix>
    where
        F: FnMut(C64) -> Result<C64>,
    {
        let n = self.dim();
        let mut d = CMatrix::zeros(n, n);
        let mut col = 0;
        for &(value, mult) in &self.clusters {
            let fv = f(value)?;
            for _ in 0..mult {
                d[(col, col)] = fv;
                col += 1;
            }
        }
        Ok(&self.basis * d * &self.basis_inv)
    }
}

fn eigenvalues(a: &CMatrix) -> Result<Vec<C64>> {
    let schur = a.clone().schur();
    let (_, t) = schur.unpack();
    Ok(t.diagonal().iter().copied().collect())
}

/// Group eigenvalues by transitive closure of "closer than gap * scale".
/// Returns (representative, multiplicity) pairs and the cluster index of
/// each input eigenvalue.
fn cluster_eigenvalues(eigs: &[C64], gap: f64) -> Result<(Vec<(C64, usize)>, Vec<usize>)> {
    let n = eigs.len();
    let scale = eigs.iter().map(|e| e.norm()).fold(1.0f64, f64::max);
    let thresh = gap * scale;

    let mut labels: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if labels[i] != labels[j] && (eigs[i] - eigs[j]).norm() <= thresh {
                    let merged = labels[i].min(labels[j]);
                    let from = labels[i].max(labels[j]);
                    for l in labels.iter_mut() {
                        if *l == from {
                            *l = merged;
                        }
                    }
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut reps: Vec<(C64, usize)> = Vec::new();
    let mut index_of_label: Vec<(usize, usize)> = Vec::new(); // (label, cluster idx)
    let mut cluster_of: Vec<usize> = vec![0; n];
    for i in 0..n {
        let label = labels[i];
        let idx = match index_of_label.iter().find(|(l, _)| *l == label) {
            Some(&(_, idx)) => idx,
            None => {
                index_of_label.push((label, reps.len()));
                reps.push((C64::new(0.0, 0.0), 0));
                reps.len() - 1
            }
        };
        reps[idx].0 += eigs[i];
        reps[idx].1 += 1;
        cluster_of[i] = idx;
    }
    for rep in reps.iter_mut() {
        rep.0 /= rep.1 as f64;
    }

    // A chain of eigenvalues each within the gap of the next can close into
    // one cluster of large diameter; functions of A_s are then meaningless.
    for (idx, &(rep, _)) in reps.iter().enumerate() {
        for i in 0..n {
            if cluster_of[i] == idx && (eigs[i] - rep).norm() > 100.0 * thresh {
                return Err(QError::Ambiguous(format!(
                    "eigenvalue cluster around {rep} has diameter above 100x the gap {gap:e}; \
                     the spectrum cannot be separated"
                )));
            }
        }
    }
    Ok((reps, cluster_of))
}

/// Multiplicative Dunford decomposition. Eigenvalues are clustered at the
/// relative gap, generalized eigenspaces are read off SVD kernels of
/// (A - c I)^m, and A_u = A_s^{-1} A. Requires A invertible.
pub fn dunford(a: &CMatrix) -> Result<DunfordPair> {
    dunford_with_gap(a, CLUSTER_GAP)
}

pub fn dunford_with_gap(a: &CMatrix, gap: f64) -> Result<DunfordPair> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(QError::Contract(format!(
            "Dunford decomposition needs a nonempty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let eigs = eigenvalues(a)?;
    let scale = eigs.iter().map(|e| e.norm()).fold(1.0f64, f64::max);
    for e in &eigs {
        if e.norm() <= 1e-12 * scale {
            return Err(QError::Domain(format!(
                "multiplicative Dunford decomposition needs an invertible matrix; \
                 eigenvalue {e} is numerically zero"
            )));
        }
    }
    let (clusters, _) = cluster_eigenvalues(&eigs, gap)?;

    // Generalized eigenspace of each cluster: the m smallest right singular
    // vectors of (A - c I)^m. Multiplicities sum to n, so stacking them
    // gives a candidate basis; a failed inversion means the clustering did
    // not separate the spectrum.
    let mut basis = CMatrix::zeros(n, n);
    let mut col = 0;
    for &(value, mult) in &clusters {
        let shifted = a - eye(n).scale(1.0) * value;
        let mut power = eye(n);
        for _ in 0..mult {
            power = &power * &shifted;
        }
        let svd = power.svd(false, true);
        let v_t = svd.v_t.as_ref().ok_or_else(|| {
            QError::Ambiguous("SVD did not return right singular vectors".into())
        })?;
        // Indices of the mult smallest singular values.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            svd.singular_values[i]
                .partial_cmp(&svd.singular_values[j])
                .unwrap()
        });
        for &k in order.iter().take(mult) {
            for r in 0..n {
                basis[(r, col)] = v_t[(k, r)].conj();
            }
            col += 1;
        }
    }

    let basis_inv = basis.clone().try_inverse().ok_or_else(|| {
        QError::Ambiguous(
            "generalized eigenspaces do not span; eigenvalue clustering failed".into(),
        )
    })?;

    let mut d = CMatrix::zeros(n, n);
    let mut dinv = CMatrix::zeros(n, n);
    let mut k = 0;
    for &(value, mult) in &clusters {
        for _ in 0..mult {
            d[(k, k)] = value;
            dinv[(k, k)] = C64::new(1.0, 0.0) / value;
            k += 1;
        }
    }
    let semisimple = &basis * &d * &basis_inv;
    let unipotent = &basis * &dinv * &basis_inv * a;

    // Reconstruction check; failure indicates ill conditioning rather than
    // a caller error.
    let anorm = a.norm().max(1.0);
    if (&semisimple * &unipotent - a).norm() > 1e-6 * anorm {
        return Err(QError::Ambiguous(
            "Dunford reconstruction failed; matrix is too ill-conditioned to split".into(),
        ));
    }

    Ok(DunfordPair {
        semisimple,
        unipotent,
        basis,
        basis_inv,
        clusters,
    })
}

/// U^lambda for unipotent U and complex lambda, through the terminating
/// binomial series sum_k binom(lambda, k) (U - I)^k. Integer lambda agrees
/// with ordinary powers and the addition law holds exactly.
pub fn unipotent_pow(u: &CMatrix, lambda: C64) -> Result<CMatrix> {
    let n = u.nrows();
    if n == 0 || u.ncols() != n {
        return Err(QError::Contract(format!(
            "unipotent power needs a nonempty square matrix, got {}x{}",
            u.nrows(),
            u.ncols()
        )));
    }
    let nil = u - eye(n);
    let mut check = eye(n);
    for _ in 0..n {
        check = &check * &nil;
    }
    if check.norm() > 1e-8 * u.norm().max(1.0).powi(n as i32) {
        return Err(QError::Domain(format!(
            "matrix is not unipotent: ||(U - I)^{n}|| = {:.3e}",
            check.norm()
        )));
    }
    let mut result = eye(n);
    let mut term = eye(n);
    let mut coeff = C64::new(1.0, 0.0);
    for k in 0..n - 1 {
        coeff *= (lambda - C64::new(k as f64, 0.0)) / C64::new((k + 1) as f64, 0.0);
        term = &term * &nil;
        result += term.scale(1.0) * coeff;
    }
    Ok(result)
}

/// Matrix character e_{q,A}(z) = f(A_s) A_u^{l_q(z)} with f(c) = e_{q,c}(z).
/// Satisfies e_{q,A}(qz) = A e_{q,A}(z); poles where any eigenvalue's scalar
/// character has one.
pub fn e_matrix(
    q: &QParameter,
    pair: &DunfordPair,
    z: C64,
    tol: &SeriesTolerance,
) -> Result<CMatrix> {
    let ss = pair.apply_scalar(|c| qchar(q, c, z, tol))?;
    let up = unipotent_pow(pair.unipotent(), qlog(q, z, tol)?)?;
    Ok(ss * up)
}

/// Tensor-defect cocycle Phi(A,B; z) = e_{q,As tensor Bs}(z)^{-1}
/// (e_{q,As}(z) tensor e_{q,Bs}(z)). Elliptic in z, and measures how far
/// the matrix character is from being monoidal.
pub fn phi_cocycle(
    q: &QParameter,
    a: &DunfordPair,
    b: &DunfordPair,
    z: C64,
    tol: &SeriesTolerance,
) -> Result<CMatrix> {
    let ab = dunford(&kron(a.semisimple(), b.semisimple()))?;
    let e_ab = e_matrix(q, &ab, z, tol)?;
    let e_a = pair_semisimple_char(q, a, z, tol)?;
    let e_b = pair_semisimple_char(q, b, z, tol)?;
    let inv = e_ab.try_inverse().ok_or_else(|| {
        QError::PoleProximity {
            what: "e_{q, As tensor Bs}(z) is singular at the cocycle evaluation point".into(),
            near: z,
        }
    })?;
    Ok(inv * kron(&e_a, &e_b))
}

fn pair_semisimple_char(
    q: &QParameter,
    pair: &DunfordPair,
    z: C64,
    tol: &SeriesTolerance,
) -> Result<CMatrix> {
    pair.apply_scalar(|c| qchar(q, c, z, tol))
}

/// Column-major flattening of a matrix.
pub fn vec_col(x: &CMatrix) -> nalgebra::DVector<C64> {
    nalgebra::DVector::from_column_slice(x.as_slice())
}

/// Inverse of vec_col.
pub fn unvec_col(v: &nalgebra::DVector<C64>, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Solve q^k X A - A X = R for X. The operator is invertible exactly when
/// Sp(q^k A) and Sp(A) are disjoint; a collision is reported as a resonance
/// naming the pair. Uses the column-major vec identity
/// vec(M X N) = kron(M, N^T) vec(X) in the first-index-fastest convention.
pub fn solve_intertwine(q: &QParameter, k: i64, a: &CMatrix, rhs: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    if a.ncols() != n || rhs.nrows() != n || rhs.ncols() != n {
        return Err(QError::Contract(format!(
            "intertwining solve needs square matrices of one size, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    let qk = q.pow_int(k);
    let eigs = eigenvalues(a)?;
    let scale = eigs.iter().map(|e| e.norm()).fold(1.0f64, f64::max);
    for (i, ei) in eigs.iter().enumerate() {
        for (j, ej) in eigs.iter().enumerate() {
            if (qk * ei - ej).norm() <= 1e-10 * scale.max(qk.norm() * scale) {
                return Err(QError::Resonance {
                    what: format!(
                        "q^{k} Sp(A) meets Sp(A) (eigenvalues {i} and {j}); \
                         the intertwining equation is singular"
                    ),
                    left: qk * ei,
                    right: *ej,
                });
            }
        }
    }

    // vec(X A) = kron(I, A^T) vec(X), vec(A X) = kron(A, I) vec(X).
    let id = eye(n);
    let op = kron(&id, &a.transpose()).scale(1.0) * qk - kron(a, &id);
    let lu = op.lu();
    let sol = lu.solve(&vec_col(rhs)).ok_or_else(|| {
        QError::Ambiguous("intertwining operator is numerically singular".into())
    })?;
    Ok(unvec_col(&sol, n, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rand_c(rng: &mut ChaCha8Rng) -> C64 {
        c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    fn rand_matrix(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
        CMatrix::from_fn(n, n, |_, _| rand_c(rng))
    }

    /// Random invertible matrix, retried until well-conditioned enough.
    fn rand_invertible(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
        loop {
            let m = rand_matrix(rng, n);
            if let Some(inv) = m.clone().try_inverse() {
                if inv.norm() * m.norm() < 1e3 {
                    return m;
                }
            }
        }
    }

    #[test]
    fn kron_first_index_fastest() {
        let a = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0), c(4.0, 0.0)]);
        let b = CMatrix::from_row_slice(2, 2, &[c(0.0, 1.0), c(5.0, 0.0), c(6.0, 0.0), c(7.0, 0.0)]);
        let k = kron(&a, &b);
        // Row index i1 + 2 i2, column j1 + 2 j2 (zero-based): A varies fastest.
        for i1 in 0..2 {
            for i2 in 0..2 {
                for j1 in 0..2 {
                    for j2 in 0..2 {
                        assert_eq!(k[(i1 + 2 * i2, j1 + 2 * j2)], a[(i1, j1)] * b[(i2, j2)]);
                    }
                }
            }
        }
    }

    #[test]
    fn kron_mixed_product_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let a = rand_matrix(&mut rng, 2);
            let b = rand_matrix(&mut rng, 3);
            let x = rand_matrix(&mut rng, 2);
            let y = rand_matrix(&mut rng, 3);
            let lhs = kron(&a, &b) * kron(&x, &y);
            let rhs = kron(&(&a * &x), &(&b * &y));
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn vec_col_turns_sandwich_into_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..10 {
            let m = rand_matrix(&mut rng, 3);
            let n = rand_matrix(&mut rng, 3);
            let x = rand_matrix(&mut rng, 3);
            let lhs = vec_col(&(&m * &x * &n));
            let rhs = kron(&m, &n.transpose()) * vec_col(&x);
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn dunford_on_diagonalizable_matrix_has_identity_unipotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let v = rand_invertible(&mut rng, 3);
            let d = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                c(1.0, 0.5),
                c(-2.0, 0.1),
                c(0.3, -1.0),
            ]));
            let a = &v * d * v.clone().try_inverse().unwrap();
            let pair = dunford(&a).unwrap();
            assert!((pair.unipotent() - eye(3)).norm() < 1e-8);
            assert!((pair.semisimple() - &a).norm() < 1e-8 * a.norm());
        }
    }

    /// Random unit upper-triangular matrix: conjugation by it keeps a
    /// triangular matrix triangular with the same diagonal, so Schur reads
    /// off defective eigenvalues exactly and clustering at 1e-8 is sound.
    fn rand_unit_upper(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
        let mut s = eye(n);
        for i in 0..n {
            for j in (i + 1)..n {
                s[(i, j)] = rand_c(rng);
            }
        }
        s
    }

    #[test]
    fn dunford_invariants_on_jordan_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        // J_3(2) + J_1(i), conjugated by unit triangular matrices so the
        // spectrum stays exactly {2, 2, 2, i}.
        for _ in 0..10 {
            let mut j = CMatrix::zeros(4, 4);
            j[(0, 0)] = c(2.0, 0.0);
            j[(0, 1)] = c(1.0, 0.0);
            j[(1, 1)] = c(2.0, 0.0);
            j[(1, 2)] = c(1.0, 0.0);
            j[(2, 2)] = c(2.0, 0.0);
            j[(3, 3)] = c(0.0, 1.0);
            let v = rand_unit_upper(&mut rng, 4);
            let a = &v * j * v.clone().try_inverse().unwrap();
            let pair = dunford(&a).unwrap();

            let s = pair.semisimple();
            let u = pair.unipotent();
            assert!((s * u - &a).norm() < 1e-9 * a.norm().max(1.0));
            assert!((u * s - &a).norm() < 1e-9 * a.norm().max(1.0));
            let nil = u - eye(4);
            let mut p = eye(4);
            for _ in 0..4 {
                p = &p * &nil;
            }
            assert!(p.norm() < 1e-9);
            // Two clusters: 2 with multiplicity 3 and i with multiplicity 1.
            let mut mults: Vec<usize> = pair.clusters().iter().map(|&(_, m)| m).collect();
            mults.sort();
            assert_eq!(mults, vec![1, 3]);
        }
    }

    #[test]
    fn dunford_never_silently_wrong_on_scattered_defective_spectrum() {
        // A dense similarity of a Jordan block scatters the computed
        // eigenvalues by ~ eps^(1/3), far above the clustering gap. Such
        // inputs are either rejected or still satisfy the pair invariants;
        // what is not allowed is a quietly wrong answer.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..10 {
            let mut j = CMatrix::zeros(3, 3);
            j[(0, 0)] = c(2.0, 0.0);
            j[(0, 1)] = c(1.0, 0.0);
            j[(1, 1)] = c(2.0, 0.0);
            j[(1, 2)] = c(1.0, 0.0);
            j[(2, 2)] = c(2.0, 0.0);
            let v = rand_invertible(&mut rng, 3);
            let a = &v * j * v.clone().try_inverse().unwrap();
            match dunford(&a) {
                Err(_) => {}
                Ok(pair) => {
                    let norm = a.norm().max(1.0);
                    assert!((pair.semisimple() * pair.unipotent() - &a).norm() < 1e-6 * norm);
                    let nil = pair.unipotent() - eye(3);
                    let p = &nil * &nil * &nil;
                    assert!(p.norm() < 1e-6 * norm);
                }
            }
        }
    }

    #[test]
    fn dunford_rejects_singular_input_and_merges_sub_gap_pairs() {
        let singular = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(matches!(dunford(&singular), Err(QError::Domain(_))));

        // Eigenvalues 1e-9 apart sit below the gap and land in one cluster.
        let close = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(1.0, 0.0),
            c(1.0 + 1e-9, 0.0),
        ]));
        let pair = dunford(&close).unwrap();
        assert_eq!(pair.clusters().len(), 1);
        assert_eq!(pair.clusters()[0].1, 2);
    }

    #[test]
    fn apply_scalar_reproduces_semisimple_and_its_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let v = rand_unit_upper(&mut rng, 3);
        let mut j = CMatrix::zeros(3, 3);
        j[(0, 0)] = c(1.5, 0.0);
        j[(0, 1)] = c(1.0, 0.0);
        j[(1, 1)] = c(1.5, 0.0);
        j[(2, 2)] = c(-0.5, 0.5);
        let a = &v * j * v.clone().try_inverse().unwrap();
        let pair = dunford(&a).unwrap();
        let id = pair.apply_scalar(|x| Ok(x)).unwrap();
        assert!((id - pair.semisimple()).norm() < 1e-9);
        let sq = pair.apply_scalar(|x| Ok(x * x)).unwrap();
        assert!((sq - pair.semisimple() * pair.semisimple()).norm() < 1e-8);
    }

    #[test]
    fn intertwiners_transport_semisimple_functions_and_unipotent_powers() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        for _ in 0..5 {
            let mut j = CMatrix::zeros(3, 3);
            j[(0, 0)] = c(2.0, 1.0);
            j[(0, 1)] = c(1.0, 0.0);
            j[(1, 1)] = c(2.0, 1.0);
            j[(2, 2)] = c(0.5, 0.0);
            let v = rand_unit_upper(&mut rng, 3);
            let w = rand_unit_upper(&mut rng, 3);
            let a = &v * &j * v.clone().try_inverse().unwrap();
            let b = &w * &j * w.clone().try_inverse().unwrap();
            // S A = B S for S = W V^{-1}.
            let s = &w * v.clone().try_inverse().unwrap();
            assert!((&s * &a - &b * &s).norm() < 1e-9 * a.norm());

            let pa = dunford(&a).unwrap();
            let pb = dunford(&b).unwrap();
            let f = |x: C64| Ok(x * x + C64::new(1.0, 0.0) / x);
            let fa = pa.apply_scalar(f).unwrap();
            let fb = pb.apply_scalar(f).unwrap();
            assert!((&s * fa - fb * &s).norm() < 1e-7 * s.norm());

            let lam = rand_c(&mut rng) * 3.0;
            let ua = unipotent_pow(pa.unipotent(), lam).unwrap();
            let ub = unipotent_pow(pb.unipotent(), lam).unwrap();
            assert!((&s * ua - ub * &s).norm() < 1e-7 * s.norm());
        }

        // Permutation transport on a diagonalizable matrix: the answer is
        // basis-independent even though the Schur ordering changes.
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(1.7, 0.0),
            c(-0.4, 0.9),
            c(3.0, -1.0),
        ]));
        let mut perm = CMatrix::zeros(3, 3);
        perm[(0, 2)] = c(1.0, 0.0);
        perm[(1, 0)] = c(1.0, 0.0);
        perm[(2, 1)] = c(1.0, 0.0);
        let b = &perm * &d * perm.transpose();
        let f = |x: C64| Ok(x * x);
        let fd = dunford(&d).unwrap().apply_scalar(f).unwrap();
        let fb = dunford(&b).unwrap().apply_scalar(f).unwrap();
        assert!((&perm * fd - fb * &perm).norm() < 1e-10);
    }

    #[test]
    fn dunford_parts_commute_with_commutant_of_a() {
        // Both factors behave like polynomials in A: they commute with every
        // matrix commuting with A, here random linear combinations of powers.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut j = CMatrix::zeros(3, 3);
        j[(0, 0)] = c(1.5, -0.3);
        j[(0, 1)] = c(1.0, 0.0);
        j[(1, 1)] = c(1.5, -0.3);
        j[(2, 2)] = c(0.7, 0.2);
        let v = rand_unit_upper(&mut rng, 3);
        let a = &v * &j * v.clone().try_inverse().unwrap();
        let pair = dunford(&a).unwrap();
        for _ in 0..10 {
            let mut commutant = eye(3).scale(0.0);
            let mut power = eye(3);
            for _ in 0..3 {
                commutant += power.clone() * rand_c(&mut rng);
                power = &power * &a;
            }
            let scale = commutant.norm().max(1.0);
            assert!((&commutant * pair.semisimple() - pair.semisimple() * &commutant).norm() < 1e-9 * scale);
            assert!((&commutant * pair.unipotent() - pair.unipotent() * &commutant).norm() < 1e-9 * scale);
        }
    }

    #[test]
    fn unipotent_pow_matches_integer_powers_and_addition_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut u = eye(4);
        u[(0, 1)] = c(0.7, -0.2);
        u[(1, 2)] = c(-0.3, 0.4);
        u[(2, 3)] = c(0.1, 0.9);
        u[(0, 2)] = c(0.5, 0.0);
        for m in -3i32..=3 {
            let direct = if m >= 0 {
                let mut p = eye(4);
                for _ in 0..m {
                    p = &p * &u;
                }
                p
            } else {
                let inv = u.clone().try_inverse().unwrap();
                let mut p = eye(4);
                for _ in 0..-m {
                    p = &p * &inv;
                }
                p
            };
            let viaseries = unipotent_pow(&u, c(m as f64, 0.0)).unwrap();
            assert!((direct - viaseries).norm() < 1e-10);
        }
        for _ in 0..10 {
            let lam = rand_c(&mut rng) * 2.0;
            let mu = rand_c(&mut rng) * 2.0;
            let lhs = unipotent_pow(&u, lam + mu).unwrap();
            let rhs = unipotent_pow(&u, lam).unwrap() * unipotent_pow(&u, mu).unwrap();
            assert!((lhs - rhs).norm() < 1e-10);
        }
        let not_unipotent = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(2.0, 0.0),
            c(1.0, 0.0),
        ]));
        assert!(matches!(
            unipotent_pow(&not_unipotent, c(0.5, 0.0)),
            Err(QError::Domain(_))
        ));
    }

    #[test]
    fn solve_intertwine_scalar_and_dense_oracles() {
        let q = QParameter::from_q(c(3.0, 0.0)).unwrap();
        // Scalar: q^k x a - a x = r has x = r / (a (q^k - 1)).
        let a1 = CMatrix::from_element(1, 1, c(0.7, 0.3));
        let r1 = CMatrix::from_element(1, 1, c(-1.1, 0.6));
        let x1 = solve_intertwine(&q, 2, &a1, &r1).unwrap();
        let expected = r1[(0, 0)] / (a1[(0, 0)] * (q.pow_int(2) - c(1.0, 0.0)));
        assert!((x1[(0, 0)] - expected).norm() < 1e-12);

        // Dense 4x4: plant X, build the right-hand side, recover X.
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        for k in [1i64, 2, 5] {
            let a = rand_invertible(&mut rng, 4);
            let x = rand_matrix(&mut rng, 4);
            let rhs = (&x * &a).scale(1.0) * q.pow_int(k) - &a * &x;
            let sol = solve_intertwine(&q, k, &a, &rhs).unwrap();
            assert!((sol - &x).norm() < 1e-8 * x.norm());
        }
    }

    #[test]
    fn solve_intertwine_reports_resonant_pair() {
        let q = QParameter::from_q(c(2.0, 0.0)).unwrap();
        // Eigenvalues 1 and 2 = q^1 * 1: resonant at k = 1.
        let a = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(1.0, 0.0),
            c(2.0, 0.0),
        ]));
        let rhs = eye(2);
        match solve_intertwine(&q, 1, &a, &rhs) {
            Err(QError::Resonance { left, right, .. }) => {
                assert!((left - right).norm() < 1e-12);
            }
            other => panic!("expected resonance, got {other:?}"),
        }
    }

    #[test]
    fn e_matrix_satisfies_sigma_q_law() {
        let q = QParameter::from_q(c(4.0, 0.0)).unwrap();
        let tol = SeriesTolerance::default();
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        // Non-trivial Jordan structure with eigenvalues off the annulus edges.
        let mut j = CMatrix::zeros(3, 3);
        j[(0, 0)] = c(1.3, 0.4);
        j[(0, 1)] = c(1.0, 0.0);
        j[(1, 1)] = c(1.3, 0.4);
        j[(2, 2)] = c(-2.0, 0.3);
        let v = rand_unit_upper(&mut rng, 3);
        let a = &v * &j * v.clone().try_inverse().unwrap();
        let pair = dunford(&a).unwrap();
        for _ in 0..10 {
            let z = c(rng.gen_range(0.3..2.0), rng.gen_range(0.3..2.0));
            let lhs = e_matrix(&q, &pair, q.q() * z, &tol).unwrap();
            let rhs = &a * e_matrix(&q, &pair, z, &tol).unwrap();
            assert!(
                (&lhs - &rhs).norm() < 1e-9 * rhs.norm(),
                "sigma_q law residual {:.3e}",
                (&lhs - &rhs).norm() / rhs.norm()
            );
        }
    }

    #[test]
    fn phi_cocycle_is_elliptic() {
        let q = QParameter::from_q(c(4.0, 0.0)).unwrap();
        let tol = SeriesTolerance::default();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let a = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(1.3, 0.4),
            c(-2.0, 0.3),
        ]));
        let b = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(0.8, -0.1),
            c(2.5, 1.0),
        ]));
        let pa = dunford(&a).unwrap();
        let pb = dunford(&b).unwrap();
        for _ in 0..5 {
            let z = c(rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5));
            let at_z = phi_cocycle(&q, &pa, &pb, z, &tol).unwrap();
            let at_qz = phi_cocycle(&q, &pa, &pb, q.q() * z, &tol).unwrap();
            assert!(
                (&at_z - &at_qz).norm() < 1e-9 * at_z.norm(),
                "ellipticity residual {:.3e}",
                (&at_z - &at_qz).norm() / at_z.norm()
            );
        }
    }

    #[test]
    fn phi_cocycle_measures_tensor_defect() {
        let q = QParameter::from_q(c(4.0, 0.0)).unwrap();
        let tol = SeriesTolerance::default();
        let a = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(1.3, 0.4),
            c(-2.0, 0.3),
        ]));
        let b = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.8, -0.1)]));
        let pa = dunford(&a).unwrap();
        let pb = dunford(&b).unwrap();
        let z = c(0.9, 0.7);
        let phi = phi_cocycle(&q, &pa, &pb, z, &tol).unwrap();
        let e_a = pa.apply_scalar(|v| qchar(&q, v, z, &tol)).unwrap();
        let e_b = pb.apply_scalar(|v| qchar(&q, v, z, &tol)).unwrap();
        let ab = dunford(&kron(pa.semisimple(), pb.semisimple())).unwrap();
        let e_ab = e_matrix(&q, &ab, z, &tol).unwrap();
        assert!((e_ab * phi - kron(&e_a, &e_b)).norm() < 1e-9);
    }
}
