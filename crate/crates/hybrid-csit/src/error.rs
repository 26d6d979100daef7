//! Crate-wide error type.
//!
//! Every fallible operation in the library returns [`Result`]. The variants
//! are deliberately coarse: callers mostly need to distinguish bad inputs,
//! infeasible problem sizes, and numerical breakdowns (the CLI maps these to
//! distinct exit codes).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the inputs was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A matrix handed to a Hermitian-only kernel was asymmetric beyond
    /// tolerance.
    #[error("matrix is not Hermitian: max asymmetry {asymmetry:.3e} exceeds tolerance {tolerance:.3e}")]
    NotHermitian { asymmetry: f64, tolerance: f64 },

    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// Rejection sampling could not produce a channel consistent with the
    /// requested quantization cell within the attempt cap. Usually means the
    /// cell has (near-)zero probability under the generative model.
    #[error("infeasible conditioning on {context} after {attempts} attempts")]
    InfeasibleConditioning { context: String, attempts: u64 },

    /// A resolution precoder norm would divide by (near) zero.
    #[error("degenerate precoder: {0}")]
    DegeneratePrecoder(String),

    /// A current-channel projection needed for receiver processing is (near)
    /// zero; the affected draw contributes rate 0.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// The configured codebooks and user count induce more MDP states than
    /// the dense machinery supports.
    #[error("state space too large: ~{states:.3e} states (limit {limit})")]
    StateSpaceTooLarge { states: f64, limit: u64 },

    /// The LP would exceed the dense-tableau column cap.
    #[error("LP too large for the dense solver: {columns} columns (limit {limit})")]
    LpTooLarge { columns: usize, limit: usize },

    /// The simplex solver failed to converge or lost feasibility.
    #[error("LP solver failure: {0}")]
    Solver(String),

    /// Derandomizing an LP solution lost more objective value than allowed.
    #[error("derandomization shortfall: deterministic objective {achieved:.9} < LP objective {expected:.9} - tolerance")]
    DerandomizationFailure { achieved: f64, expected: f64 },

    /// The chain induced by a policy has several recurrent classes, so a
    /// single long-run rate vector is ambiguous; per-class values attached.
    #[error("reducible chain under policy: {0} recurrent classes; per-class rates attached", per_class_rates.len())]
    ReducibleChain { per_class_rates: Vec<Vec<f64>> },

    /// Malformed or version-mismatched model cache.
    #[error("cache format error: {0}")]
    CacheFormat(String),

    /// Cache integrity or provenance hash did not match.
    #[error("cache hash mismatch: {0}")]
    CacheHashMismatch(String),

    /// Configuration file or parameter error.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
