//! Runtime invariant suite behind the selftest subcommand.
//!
//! Each check replays one documented invariant of a library module on fixed
//! or deterministically seeded data and reports the measured residual against
//! a frozen bound, so an installed binary can confirm the numerics on the
//! machine it actually runs on. Checks are named module.invariant and can be
//! filtered by name substring, which in particular filters by module.

use crate::confluence::{
    char_limit_scan, default_eps_list, is_decreasing_within, lq_poisson, qchar_symmetric,
    theta_poisson, x_of,
};
use crate::connection::{build_triple, ellipticity_defect, pbreve};
use crate::error::Result;
use crate::flatcat::{
    hom_space, hom_window, jordan_tensor_decompose, naturality_check, tensor_compat_check,
    FlatObject, GaloisElement,
};
use crate::matfun::dunford;
use crate::qcore::{annulus_decompose, char_eval, CharacterSpec, QParameter};
use crate::ratsys::{Polynomial, RationalFunction, RationalMatrix, RationalMatrixSystem};
use crate::reduction::{eval_gauge, product_solution_regular, reduce_at_zero};
use crate::theta::{qlog, theta, SeriesTolerance};
use crate::{C64, CMatrix};

/// Outcome of one named invariant check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type CheckFn = fn() -> Result<(f64, f64)>;

const CHECKS: &[(&str, CheckFn)] = &[
    ("qcore.annulus_roundtrip", check_annulus_roundtrip),
    ("qcore.character_homomorphism", check_character_homomorphism),
    ("theta.functional_equation", check_theta_functional_equation),
    ("theta.zero_on_spiral", check_theta_zero),
    ("theta.qlog_shift", check_qlog_shift),
    ("matfun.dunford_reassembly", check_dunford_reassembly),
    ("matfun.plethysm_table", check_plethysm_table),
    ("ratsys.inverse_identity", check_ratsys_inverse),
    ("reduction.recurrence", check_reduction_recurrence),
    ("reduction.product_vs_series", check_product_vs_series),
    ("flatcat.tensor_action", check_tensor_action),
    ("flatcat.naturality", check_naturality),
    ("connection.ellipticity", check_connection_ellipticity),
    ("connection.twisted_automorphy", check_twisted_automorphy),
    ("confluence.poisson_agreement", check_poisson_agreement),
    ("confluence.character_multiplier", check_character_multiplier),
    ("confluence.scan_descent", check_scan_descent),
];

/// Names of every registered check, in execution order.
pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(name, _)| *name).collect()
}

/// Run the checks whose name contains the filter (all of them when none).
/// A check passes when its residual stays within the frozen bound; a check
/// that cannot even run reports the error text and fails.
pub fn run_checks(filter: Option<&str>) -> Vec<CheckReport> {
    CHECKS
        .iter()
        .filter(|(name, _)| filter.map_or(true, |f| name.contains(f)))
        .map(|&(name, check)| match check() {
            Ok((residual, bound)) => CheckReport {
                name,
                passed: residual <= bound,
                detail: format!("residual {residual:.3e}, bound {bound:.1e}"),
            },
            Err(e) => CheckReport {
                name,
                passed: false,
                detail: format!("did not run: {e}"),
            },
        })
        .collect()
}

fn q4() -> QParameter {
    QParameter::from_q(C64::new(4.0, 0.0)).expect("|q| > 1")
}

fn tol() -> SeriesTolerance {
    SeriesTolerance::new(1e-15, 200).expect("within the hard cap")
}

/// Deterministic sample points: a tiny xorshift stream mapped into an
/// annulus well away from 0, the zero spiral, and infinity.
fn sample_points(n: usize, seed: u64) -> Vec<C64> {
    let mut state = seed | 1;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    (0..n)
        .map(|_| C64::from_polar(0.5 + 1.2 * next(), 6.0 * next() - 3.0))
        .collect()
}

fn check_annulus_roundtrip() -> Result<(f64, f64)> {
    let q = q4();
    let mut worst = 0.0f64;
    for c in sample_points(25, 11) {
        let dec = annulus_decompose(&q, c)?;
        let back = q.pow_int(dec.epsilon) * dec.reduced;
        worst = worst.max((back - c).norm() / c.norm());
        let r = dec.reduced.norm();
        if !(1.0 <= r && r < q.q().norm()) {
            worst = worst.max(1.0);
        }
    }
    Ok((worst, 1e-12))
}

fn check_character_homomorphism() -> Result<(f64, f64)> {
    let q = q4();
    let mut worst = 0.0f64;
    let pts = sample_points(40, 23);
    for pair in pts.chunks(2) {
        let (z1, z2) = (pair[0], pair[1]);
        for spec in [CharacterSpec::gamma1(), CharacterSpec::gamma2()] {
            let joint = char_eval(&q, &spec, z1 * z2)?;
            let split = char_eval(&q, &spec, z1)? * char_eval(&q, &spec, z2)?;
            worst = worst.max((joint - split).norm());
        }
    }
    Ok((worst, 1e-10))
}

fn check_theta_functional_equation() -> Result<(f64, f64)> {
    let tol = tol();
    let mut worst = 0.0f64;
    for q_abs in [1.5, 4.0, 10.0] {
        let q = QParameter::from_q(C64::new(q_abs, 0.0))?;
        for z in sample_points(20, 37) {
            let lhs = theta(&q, q.q() * z, &tol)?;
            let rhs = q.q() * z * theta(&q, z, &tol)?;
            worst = worst.max((lhs - rhs).norm() / lhs.norm());
        }
    }
    Ok((worst, 1e-12))
}

fn check_theta_zero() -> Result<(f64, f64)> {
    let value = theta(&q4(), C64::new(-1.0, 0.0), &tol())?;
    Ok((value.norm(), 1e-10))
}

fn check_qlog_shift() -> Result<(f64, f64)> {
    let q = q4();
    let tol = tol();
    let mut worst = 0.0f64;
    for w in sample_points(15, 51) {
        let diff = qlog(&q, q.q() * w, &tol)? - qlog(&q, w, &tol)? - C64::new(1.0, 0.0);
        worst = worst.max(diff.norm());
    }
    Ok((worst, 1e-10))
}

fn check_dunford_reassembly() -> Result<(f64, f64)> {
    let a = CMatrix::from_row_slice(
        3,
        3,
        &[
            C64::new(2.0, 0.3),
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.2),
            C64::new(0.0, 0.0),
            C64::new(0.5, -0.1),
            C64::new(0.7, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 1.4),
        ],
    );
    let pair = dunford(&a)?;
    let reassembly = (pair.product() - &a).norm();
    let commutator =
        (pair.semisimple() * pair.unipotent() - pair.unipotent() * pair.semisimple()).norm();
    Ok((reassembly.max(commutator), 1e-9))
}

fn check_plethysm_table() -> Result<(f64, f64)> {
    let mut mismatches = 0usize;
    for n in 1..=4usize {
        for p in 1..=4usize {
            let got = jordan_tensor_decompose(n, p)?;
            let top = n + p - 1;
            let bottom = n.abs_diff(p) + 1;
            let expected: Vec<usize> = (bottom..=top).rev().step_by(2).collect();
            if got != expected {
                mismatches += 1;
            }
        }
    }
    Ok((mismatches as f64, 0.0))
}

fn check_ratsys_inverse() -> Result<(f64, f64)> {
    let one = Polynomial::new(vec![C64::new(1.0, 0.0)]);
    let z = Polynomial::new(vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
    let m = RationalMatrix::from_entries(
        2,
        vec![
            RationalFunction::new(z.clone(), one.clone())?,
            RationalFunction::one(),
            RationalFunction::new(one.clone(), Polynomial::new(vec![
                C64::new(1.0, 0.0),
                C64::new(0.5, 0.0),
            ]))?,
            RationalFunction::new(Polynomial::new(vec![C64::new(2.0, 0.0)]), one)?,
        ],
    )?;
    let inv = m.inverse()?;
    let prod = m.mul(&inv)?;
    let mut worst = 0.0f64;
    for z in sample_points(5, 67) {
        let v = prod.eval(z)?;
        worst = worst.max((v - CMatrix::identity(2, 2)).norm());
    }
    Ok((worst, 1e-10))
}

fn scalar_fuchsian_system(q: &QParameter) -> Result<RationalMatrixSystem> {
    // a(z) = 1 / (1 - z/2): strictly fuchsian, a(0) = 1.
    let den = Polynomial::new(vec![C64::new(1.0, 0.0), C64::new(-0.5, 0.0)]);
    let a = RationalFunction::new(Polynomial::new(vec![C64::new(1.0, 0.0)]), den)?;
    RationalMatrixSystem::new(q.clone(), RationalMatrix::from_entries(1, vec![a])?)
}

fn check_reduction_recurrence() -> Result<(f64, f64)> {
    let q = q4();
    let sys = scalar_fuchsian_system(&q)?;
    let series = reduce_at_zero(&sys, 30)?;
    let a0 = series.constant_form().matrix().clone();
    let mut worst = 0.0f64;
    for z in [C64::new(0.05, 0.02), C64::new(-0.03, 0.04), C64::new(0.01, -0.06)] {
        let lhs = eval_gauge(&series, q.q() * z)? * &a0;
        let rhs = sys.matrix().eval(z)? * eval_gauge(&series, z)?;
        worst = worst.max((lhs - rhs).norm());
    }
    Ok((worst, 1e-9))
}

fn check_product_vs_series() -> Result<(f64, f64)> {
    let q = q4();
    // a(z) = (1 + z/3)/(1 + z/4): regular at 0, so the one-sided product
    // solves the same equation the series gauge does.
    let num = Polynomial::new(vec![C64::new(1.0, 0.0), C64::new(1.0 / 3.0, 0.0)]);
    let den = Polynomial::new(vec![C64::new(1.0, 0.0), C64::new(0.25, 0.0)]);
    let sys = RationalMatrixSystem::new(
        q.clone(),
        RationalMatrix::from_entries(1, vec![RationalFunction::new(num, den)?])?,
    )?;
    let series = reduce_at_zero(&sys, 40)?;
    let mut worst = 0.0f64;
    for z in [C64::new(0.2, 0.1), C64::new(-0.15, 0.2), C64::new(0.1, -0.25)] {
        let by_series = eval_gauge(&series, z)?;
        let by_product = product_solution_regular(&sys, z, 60)?;
        worst = worst.max((by_series - by_product).norm());
    }
    Ok((worst, 1e-8))
}

fn check_tensor_action() -> Result<(f64, f64)> {
    let q = q4();
    let x = FlatObject::new(
        q.clone(),
        CMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(2.0, 0.0),
                C64::new(1.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.5),
            ],
        ),
    )?;
    let y = FlatObject::new(q, CMatrix::from_row_slice(1, 1, &[C64::new(1.3, 0.4)]))?;
    let mut worst = 0.0f64;
    for (spec, lambda) in [
        (CharacterSpec::gamma1(), C64::new(0.7, 0.0)),
        (CharacterSpec::gamma2(), C64::new(0.0, 0.3)),
    ] {
        let g = GaloisElement::new(spec, lambda);
        worst = worst.max(tensor_compat_check(&g, &x, &y)?);
    }
    Ok((worst, 1e-9))
}

fn check_naturality() -> Result<(f64, f64)> {
    let q = q4();
    // The unit object and its twist by q: hom space spanned by z itself.
    let unit = FlatObject::new(q.clone(), CMatrix::from_row_slice(1, 1, &[C64::new(1.0, 0.0)]))?;
    let twist = FlatObject::new(q.clone(), CMatrix::from_row_slice(1, 1, &[q.q()]))?;
    let basis = hom_space(&unit, &twist, hom_window(&unit, &twist))?;
    if basis.is_empty() {
        return Ok((1.0, 1e-9));
    }
    let g = GaloisElement::new(CharacterSpec::gamma1(), C64::new(0.4, 0.0));
    let mut worst = 0.0f64;
    for f in &basis {
        worst = worst.max(naturality_check(&g, f, &unit, &twist, C64::new(0.8, 0.3), None)?);
    }
    Ok((worst, 1e-9))
}

fn rank1_system(q: &QParameter) -> Result<RationalMatrixSystem> {
    // a(z) = (1 - z/2i)/(1 + z/3): fuchsian with distinct exponents 1 and
    // a(infinity) = (3/2)i at the two ends.
    let num = Polynomial::new(vec![C64::new(1.0, 0.0), -C64::new(1.0, 0.0) / C64::new(0.0, 2.0)]);
    let den = Polynomial::new(vec![C64::new(1.0, 0.0), C64::new(1.0 / 3.0, 0.0)]);
    RationalMatrixSystem::new(
        q.clone(),
        RationalMatrix::from_entries(1, vec![RationalFunction::new(num, den)?])?,
    )
}

fn check_connection_ellipticity() -> Result<(f64, f64)> {
    let q = q4();
    let triple = build_triple(&rank1_system(&q)?, 40)?;
    let points: Vec<C64> = sample_points(6, 83);
    Ok((ellipticity_defect(&triple, &points, &tol())?, 1e-8))
}

fn check_twisted_automorphy() -> Result<(f64, f64)> {
    let q = q4();
    let tol = tol();
    let triple = build_triple(&rank1_system(&q)?, 40)?;
    let c = triple.a0().matrix()[(0, 0)];
    let d = triple.ainf().matrix()[(0, 0)];
    let g1 = CharacterSpec::gamma1();
    let mut worst = 0.0f64;
    for a in sample_points(4, 97) {
        let lhs = pbreve(&triple, q.q() * a, &tol)?[(0, 0)];
        let rhs = char_eval(&q, &g1, d)? * pbreve(&triple, a, &tol)?[(0, 0)]
            / char_eval(&q, &g1, c)?;
        worst = worst.max((lhs - rhs).norm() / lhs.norm().max(1e-30));
    }
    Ok((worst, 1e-8))
}

fn check_poisson_agreement() -> Result<(f64, f64)> {
    let tol = tol();
    let q = QParameter::from_tau(C64::new(0.0, 0.0625))?;
    let eta = q.q().ln();
    let mut worst = 0.0f64;
    for z in [C64::new(0.9, 0.4), C64::from_polar(1.0, 2.4), C64::new(0.3, -0.8)] {
        let by_series = theta(&q, z, &tol)?;
        let resummed = theta_poisson(eta, x_of(z));
        worst = worst.max((by_series - resummed).norm() / by_series.norm());
        let l_series = qlog(&q, z, &tol)?;
        let l_resummed = lq_poisson(eta, x_of(z))?;
        worst = worst.max((l_series - l_resummed).norm());
    }
    Ok((worst, 1e-12))
}

fn check_character_multiplier() -> Result<(f64, f64)> {
    let q = QParameter::from_tau(C64::new(0.0, 0.25 * 0.5f64.powi(7)))?;
    let c = q.pow(C64::new(0.3, 0.1));
    let z = C64::from_polar(1.0, std::f64::consts::PI / 3.0);
    let lhs = qchar_symmetric(&q, c, q.q() * z)?;
    let rhs = c * qchar_symmetric(&q, c, z)?;
    Ok(((lhs - rhs).norm() / rhs.norm(), 1e-11))
}

fn check_scan_descent() -> Result<(f64, f64)> {
    let q0 = QParameter::from_tau(C64::new(0.0, 0.25))?;
    let z = C64::from_polar(1.0, std::f64::consts::PI / 3.0);
    let errors = char_limit_scan(&q0, C64::new(0.3, 0.1), z, &default_eps_list())?;
    if !is_decreasing_within(&errors, 1.2, 1e-12) {
        return Ok((1.0, 1e-3));
    }
    Ok((errors[errors.len() - 1], 1e-3))
}
