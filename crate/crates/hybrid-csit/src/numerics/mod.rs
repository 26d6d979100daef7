//! Minimal complex linear algebra and reproducible random sampling.
//!
//! Everything in this module is sized for the tiny dense problems the rest of
//! the crate actually produces (channel vectors and precoder matrices with at
//! most a handful of antennas), so the kernels favor clarity, determinism and
//! numerical robustness over asymptotic cleverness. Rates are always in bits
//! (log base 2).

mod complex;
mod linalg;
mod rng;

pub use complex::{ComplexMatrix, ComplexVector};
pub use linalg::{
    cholesky, logdet_id_plus, solve_lower_triangular, solve_real, svd_thin, waterfill,
};
pub use rng::{sample_cn, RngStream};
