//! Linear q-difference systems with |q| > 1: canonical local solutions at 0 and
//! infinity, Birkhoff connection matrices, local Galois group actions, and
//! q -> 1 confluence diagnostics.
//!
//! The crate is organized bottom-up:
//!
//! - [`qcore`]: the base parameter q = e^{-2i pi tau}, the fundamental annulus,
//!   the splitting of C* into a unit factor and a q-power factor, and the
//!   characters built on that splitting.
//! - [`theta`]: the Jacobi theta series, the theta-based q-logarithm and
//!   q-characters, and the scalar cocycles relating them.
//! - [`matfun`]: multiplicative Dunford decomposition and the matrix-valued
//!   extensions of the special functions (e_{q,A}, unipotent powers, the
//!   tensor cocycle, Kronecker products, intertwining solves).
//! - [`ratsys`]: rational matrix systems, gauge transforms, singular loci,
//!   resonance bookkeeping and shearing normalization.
//! - [`reduction`]: power-series gauge reduction to constant systems at 0 and
//!   infinity, with functional-equation continuation.
//! - [`flatcat`]: flat objects and morphisms, the local Galois action, and the
//!   Jordan plethysm table.
//! - [`connection`]: connection triples, the connection matrix P and its
//!   twisted variant, and the abelian closed forms used as cross-checks.
//! - [`confluence`]: q -> 1 scans comparing q-world data against its classical
//!   limits.

pub mod confluence;
pub mod connection;
pub mod error;
pub mod flatcat;
pub mod matfun;
pub mod qcore;
pub mod ratsys;
pub mod reduction;
pub mod selftest;
pub mod theta;

pub use error::QError;

/// Convenience alias used throughout: dynamically sized complex matrix.
pub type CMatrix = nalgebra::DMatrix<num_complex::Complex64>;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
