//! System file parsing.
//!
//! A system file is JSON with a base parameter and a square rational matrix:
//!
//! ```json
//! {
//!   "tau": [0.0, 0.25],
//!   "matrix": [[{"num": [[1.0, 0.0]], "den": [[1.0, 0.0], [-0.5, 0.0]]}]]
//! }
//! ```
//!
//! The base is given as "tau" or "q", each an [re, im] pair; "tau" wins when
//! both are present. Matrix entries list numerator and denominator
//! coefficients as [re, im] pairs in ascending degree. A system matrix must
//! have a determinant that is not identically zero; a confluent family
//! matrix carries no such requirement (it may be nilpotent).

use qconnect::confluence::ConfluentFamily;
use qconnect::qcore::QParameter;
use qconnect::ratsys::{Polynomial, RationalFunction, RationalMatrix, RationalMatrixSystem};
use qconnect::{C64, QError};
use serde::Deserialize;

type Result<T> = std::result::Result<T, QError>;

#[derive(Deserialize)]
struct RawEntry {
    num: Vec<[f64; 2]>,
    den: Vec<[f64; 2]>,
}

#[derive(Deserialize)]
struct RawSystem {
    tau: Option<[f64; 2]>,
    q: Option<[f64; 2]>,
    matrix: Vec<Vec<RawEntry>>,
}

fn read(path: &str) -> Result<RawSystem> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| QError::Contract(format!("cannot read system file {path}: {e}")))?;
    serde_json::from_str(&text)
        .map_err(|e| QError::Contract(format!("system file {path} is not valid JSON: {e}")))
}

fn base_parameter(raw: &RawSystem) -> Result<QParameter> {
    if let Some([re, im]) = raw.tau {
        return QParameter::from_tau(C64::new(re, im));
    }
    if let Some([re, im]) = raw.q {
        return QParameter::from_q(C64::new(re, im));
    }
    Err(QError::Contract(
        "system file needs a base parameter: either \"tau\" or \"q\" as an [re, im] pair".into(),
    ))
}

fn poly(coeffs: &[[f64; 2]]) -> Polynomial {
    Polynomial::new(coeffs.iter().map(|&[re, im]| C64::new(re, im)).collect())
}

fn rational_matrix(raw: &RawSystem) -> Result<RationalMatrix> {
    let n = raw.matrix.len();
    if n == 0 {
        return Err(QError::Contract("system matrix must be nonempty".into()));
    }
    let mut entries = Vec::with_capacity(n * n);
    for (i, row) in raw.matrix.iter().enumerate() {
        if row.len() != n {
            return Err(QError::Contract(format!(
                "system matrix must be square: row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        for e in row {
            entries.push(RationalFunction::new(poly(&e.num), poly(&e.den))?);
        }
    }
    RationalMatrix::from_entries(n, entries)
}

/// Load a q-difference system: base parameter plus an invertible matrix.
pub fn load_system(path: &str) -> Result<RationalMatrixSystem> {
    let raw = read(path)?;
    let q = base_parameter(&raw)?;
    let m = rational_matrix(&raw)?;
    if m.det()?.is_zero() {
        return Err(QError::Contract(format!(
            "system file {path}: matrix determinant is identically zero"
        )));
    }
    RationalMatrixSystem::new(q, m)
}

/// Load a confluent family: the base parameter is q0 and the matrix is the
/// deformation direction Btilde.
pub fn load_family(path: &str) -> Result<ConfluentFamily> {
    let raw = read(path)?;
    let q0 = base_parameter(&raw)?;
    let m = rational_matrix(&raw)?;
    Ok(ConfluentFamily::new(q0, m))
}
