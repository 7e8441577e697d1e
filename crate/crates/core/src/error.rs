//! Error type shared by the whole crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("Kelvin transform is singular at the origin")]
    KelvinSingularity,

    #[error("declared symmetry `{tag}` fails spot check: residual {residual:.3e} at {point:?}")]
    SymmetryViolation {
        tag: String,
        residual: f64,
        point: Vec<f64>,
    },

    #[error("non-integrable decay: field decays like |y|^-{decay} but dimension is {n}")]
    NonIntegrableDecay { decay: f64, n: usize },

    #[error("quadrature did not reach rel_tol={rel_tol:.1e}: err_est {err_est:.3e} on value {value:.6e}")]
    QuadratureNotConverged {
        value: f64,
        err_est: f64,
        rel_tol: f64,
    },

    #[error("right-hand side not orthogonal to deflation space: |<rhs,v_{index}>| = {magnitude:.3e} (tol {tol:.1e})")]
    DeflationConsistency {
        index: usize,
        magnitude: f64,
        tol: f64,
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("no sign change of the reduced coefficients in the admissible box; sampled table:\n{table}")]
    NoRoot { table: String },

    #[error("iteration did not converge after {iters} steps: {what}")]
    NoConvergence { what: String, iters: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
