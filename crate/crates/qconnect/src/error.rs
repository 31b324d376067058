//! Error type shared by every module, split by how the caller should react:
//! input/contract violations versus numeric failures (resonance, pole
//! proximity, non-convergence).

use std::fmt;

/// Errors produced by the library.
#[derive(Debug, Clone, PartialEq)]
pub enum QError {
    /// The input lies outside the mathematical domain of the operation
    /// (|q| <= 1, c = 0, a non-square matrix, ...).
    Domain(String),
    /// A declared precondition between well-formed inputs is violated
    /// (window too small, system not strictly fuchsian, ...).
    Contract(String),
    /// An eigenvalue collision makes a linear solve singular; carries the
    /// colliding pair.
    Resonance {
        what: String,
        left: num_complex::Complex64,
        right: num_complex::Complex64,
    },
    /// The evaluation point is too close to a pole or zero spiral; carries
    /// the offending spiral point.
    PoleProximity {
        what: String,
        near: num_complex::Complex64,
    },
    /// A series or iteration failed to converge within its term budget.
    NoConvergence(String),
    /// Eigenvalue clustering could not be resolved unambiguously.
    Ambiguous(String),
}

impl QError {
    /// Process exit code contract: 1 for input/contract violations,
    /// 2 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            QError::Domain(_) | QError::Contract(_) => 1,
            QError::Resonance { .. }
            | QError::PoleProximity { .. }
            | QError::NoConvergence(_)
            | QError::Ambiguous(_) => 2,
        }
    }
}

impl fmt::Display for QError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QError::Domain(msg) => write!(f, "domain error: {msg}"),
            QError::Contract(msg) => write!(f, "contract violation: {msg}"),
            QError::Resonance { what, left, right } => {
                write!(f, "resonance in {what}: eigenvalues {left} and {right} collide")
            }
            QError::PoleProximity { what, near } => {
                write!(f, "pole proximity in {what}: evaluation point too close to {near}")
            }
            QError::NoConvergence(msg) => write!(f, "no convergence: {msg}"),
            QError::Ambiguous(msg) => write!(f, "ambiguous clustering: {msg}"),
        }
    }
}

impl std::error::Error for QError {}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, QError>;
