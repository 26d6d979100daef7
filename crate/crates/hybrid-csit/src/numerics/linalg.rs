//! Dense factorizations: Cholesky log-determinants, a one-sided Jacobi SVD,
//! water-filling, and a pivoted real linear solve.
//!
//! `log|I + M|` goes through Cholesky rather than an eigendecomposition; the
//! test suite checks it against an independent eigenvalue oracle.

use num_complex::Complex64;

use super::complex::{ComplexMatrix, ComplexVector};
use crate::error::{Error, Result};

/// Relative floor used when checking Hermitian symmetry.
const HERMITIAN_TOL: f64 = 1e-9;

/// Lower-triangular Cholesky factor `L` with `M = L·L†` for Hermitian
/// positive-definite `M`. The strict upper triangle of the result is zero.
pub fn cholesky(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    assert_eq!(m.rows(), m.cols(), "cholesky needs a square matrix");
    let n = m.rows();
    let mut l = ComplexMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)].re;
        for k in 0..j {
            diag -= l[(j, k)].norm_sqr();
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite {
                index: j,
                pivot: diag,
            });
        }
        let d = diag.sqrt();
        l[(j, j)] = Complex64::new(d, 0.0);
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L·X = B` for lower-triangular `L` by forward substitution.
pub fn solve_lower_triangular(l: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    assert_eq!(l.rows(), l.cols());
    assert_eq!(l.rows(), b.rows());
    let n = l.rows();
    let mut x = b.clone();
    for j in 0..b.cols() {
        for i in 0..n {
            let mut s = x[(i, j)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, j)];
            }
            x[(i, j)] = s / l[(i, i)];
        }
    }
    x
}

/// `log₂ det(I + M)` for Hermitian positive-semidefinite `M`, in bits.
///
/// The input is symmetrized as `(M + M†)/2` before factorization; asymmetry
/// beyond `1e-9` (relative to the largest entry, floored at 1) is rejected.
/// Values are nonnegative because `I + M ⪰ I`.
pub fn logdet_id_plus(m: &ComplexMatrix) -> Result<f64> {
    assert_eq!(m.rows(), m.cols(), "logdet_id_plus needs a square matrix");
    let tolerance = HERMITIAN_TOL * m.max_abs().max(1.0);
    let asymmetry = m.max_asymmetry();
    if asymmetry > tolerance {
        return Err(Error::NotHermitian {
            asymmetry,
            tolerance,
        });
    }
    let n = m.rows();
    let mut shifted = m.hermitian_part();
    for i in 0..n {
        shifted[(i, i)] += Complex64::new(1.0, 0.0);
    }
    let l = cholesky(&shifted).map_err(|_| {
        Error::InvalidInput("logdet_id_plus: matrix is not positive semidefinite".into())
    })?;
    let mut bits = 0.0;
    for i in 0..n {
        bits += 2.0 * l[(i, i)].re.log2();
    }
    // Tiny negative values are factorization round-off on M ≈ 0.
    Ok(bits.max(0.0))
}

/// Thin SVD `A = U·diag(σ)·V†` with `σ` sorted descending and
/// `U: m×r`, `V: n×r`, `r = min(m, n)`. One-sided Jacobi on columns.
pub fn svd_thin(a: &ComplexMatrix) -> (ComplexMatrix, Vec<f64>, ComplexMatrix) {
    if a.rows() < a.cols() {
        // Orthogonalize the taller transpose, then swap factors:
        // A† = U'ΣV'† ⇒ A = V'ΣU'†.
        let (u, s, v) = svd_thin(&a.adjoint());
        return (v, s, u);
    }
    let m = a.rows();
    let n = a.cols();
    let mut b = a.clone();
    let mut v = ComplexMatrix::identity(n);
    let scale = a.frobenius_norm().max(1e-300);
    for _sweep in 0..64 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let bp = b.col(p);
                let bq = b.col(q);
                let alpha = bp.norm_sq();
                let beta = bq.norm_sq();
                let gamma = bp.inner(&bq);
                if gamma.norm() <= 1e-15 * scale * scale {
                    continue;
                }
                rotated = true;
                // Phase-align column q so the pair reduces to a real Jacobi
                // rotation on [[α, |γ|], [|γ|, β]].
                let phase = gamma / gamma.norm();
                let g = gamma.norm();
                let tau = (beta - alpha) / (2.0 * g);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * cs;
                let phase_conj = phase.conj();
                for mat in [&mut b, &mut v] {
                    let rows = mat.rows();
                    for i in 0..rows {
                        let xp = mat[(i, p)];
                        let xq = mat[(i, q)] * phase_conj;
                        mat[(i, p)] = xp * cs - xq * sn;
                        mat[(i, q)] = xp * sn + xq * cs;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    // Extract singular values and left vectors, then sort descending.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| b.col(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());
    let mut sigma = Vec::with_capacity(n);
    let mut u_cols = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    for &j in &order {
        sigma.push(norms[j]);
        let col = b.col(j);
        u_cols.push(if norms[j] > 1e-300 {
            col.scale_re(1.0 / norms[j])
        } else {
            ComplexVector::zeros(m)
        });
        v_cols.push(v.col(j));
    }
    (
        ComplexMatrix::from_columns(&u_cols),
        sigma,
        ComplexMatrix::from_columns(&v_cols),
    )
}

/// Water-filling power allocation: maximizes `Σ log(1 + p_i·g_i)` subject to
/// `Σ p_i = budget`, `p_i ≥ 0`. Zero gains receive zero power.
pub fn waterfill(gains: &[f64], budget: f64) -> Vec<f64> {
    assert!(budget >= 0.0);
    let mut order: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    order.sort_by(|&i, &j| gains[j].partial_cmp(&gains[i]).unwrap());
    let mut powers = vec![0.0; gains.len()];
    if order.is_empty() || budget == 0.0 {
        return powers;
    }
    // Try the k strongest modes active, largest feasible k wins.
    let mut active = order.len();
    let mut level = 0.0;
    while active > 0 {
        let inv_sum: f64 = order[..active].iter().map(|&i| 1.0 / gains[i]).sum();
        level = (budget + inv_sum) / active as f64;
        let weakest = order[active - 1];
        if level - 1.0 / gains[weakest] >= 0.0 {
            break;
        }
        active -= 1;
    }
    for &i in &order[..active] {
        powers[i] = (level - 1.0 / gains[i]).max(0.0);
    }
    powers
}

/// Solves the real linear system `A·x = b` by LU with partial pivoting.
/// `a` is row-major `n×n`.
pub fn solve_real(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    assert_eq!(a.len(), n * n, "solve_real shape mismatch");
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = a[col * n + col].abs();
        for r in (col + 1)..n {
            let v = a[r * n + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val < 1e-300 {
            return Err(Error::Solver(format!(
                "singular linear system (pivot column {col})"
            )));
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for r in (col + 1)..n {
            let factor = a[r * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            a[r * n + col] = 0.0;
            for j in (col + 1)..n {
                a[r * n + j] -= factor * a[col * n + j];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for j in (row + 1)..n {
            s -= a[row * n + j] * x[j];
        }
        x[row] = s / a[row * n + row];
    }
    Ok(x)
}

// ── tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_cn, RngStream};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Eigenvalues of a 2×2 Hermitian matrix, closed form. Independent oracle
    /// for the Cholesky-based log-det path.
    fn eig2(m: &ComplexMatrix) -> (f64, f64) {
        let a = m[(0, 0)].re;
        let d = m[(1, 1)].re;
        let b = m[(0, 1)];
        let mid = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        (mid + rad, mid - rad)
    }

    fn random_psd2(seed: u64) -> ComplexMatrix {
        let mut rng = RngStream::new(seed, 0);
        let g = ComplexMatrix::from_rows(&[
            sample_cn(2, 1.0, &mut rng).unwrap(),
            sample_cn(2, 1.0, &mut rng).unwrap(),
        ]);
        g.matmul(&g.adjoint())
    }

    #[test]
    fn logdet_zero_matrix_is_zero() {
        assert_eq!(logdet_id_plus(&ComplexMatrix::zeros(2, 2)).unwrap(), 0.0);
    }

    #[test]
    fn logdet_identity_is_two_bits() {
        let v = logdet_id_plus(&ComplexMatrix::identity(2)).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn logdet_matches_eigenvalue_oracle() {
        let m = random_psd2(7);
        let (l1, l2) = eig2(&m);
        let oracle = (1.0 + l1).log2() + (1.0 + l2).log2();
        let got = logdet_id_plus(&m).unwrap();
        assert!(
            (got - oracle).abs() < 1e-9,
            "got {got}, oracle {oracle}"
        );
    }

    #[test]
    fn logdet_rejects_asymmetric_input() {
        let m = ComplexMatrix::new(2, 2, vec![c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(
            logdet_id_plus(&m),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn logdet_monotone_under_psd_ordering() {
        for seed in 0..50u64 {
            let a = random_psd2(1000 + seed);
            let d = random_psd2(2000 + seed);
            let lo = logdet_id_plus(&a).unwrap();
            let hi = logdet_id_plus(&a.add(&d)).unwrap();
            assert!(hi >= lo - 1e-9, "seed {seed}: {hi} < {lo}");
        }
    }

    #[test]
    fn svd_identity_has_unit_singular_values() {
        let (_, s, _) = svd_thin(&ComplexMatrix::identity(3));
        for v in s {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn svd_diagonal_values() {
        let m = ComplexMatrix::new(2, 2, vec![c(3.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(2.0, 0.0)]);
        let (_, s, _) = svd_thin(&m);
        assert!((s[0] - 3.0).abs() < 1e-12);
        assert!((s[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn svd_reconstructs_random_wide_matrix() {
        let mut rng = RngStream::new(3, 0);
        let a = ComplexMatrix::from_rows(&[
            sample_cn(4, 1.0, &mut rng).unwrap(),
            sample_cn(4, 1.0, &mut rng).unwrap(),
        ]);
        let (u, s, v) = svd_thin(&a);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        let mut sigma = ComplexMatrix::zeros(s.len(), s.len());
        for (i, &sv) in s.iter().enumerate() {
            sigma[(i, i)] = c(sv, 0.0);
        }
        let rebuilt = u.matmul(&sigma).matmul(&v.adjoint());
        assert!(rebuilt.sub(&a).frobenius_norm() < 1e-9);
    }

    #[test]
    fn cholesky_solve_roundtrip() {
        let m = random_psd2(11);
        let mut shifted = m.clone();
        for i in 0..2 {
            shifted[(i, i)] += c(1.0, 0.0);
        }
        let l = cholesky(&shifted).unwrap();
        let rebuilt = l.matmul(&l.adjoint());
        assert!(rebuilt.sub(&shifted).frobenius_norm() < 1e-10);
        let b = ComplexMatrix::identity(2);
        let x = solve_lower_triangular(&l, &b);
        assert!(l.matmul(&x).sub(&b).frobenius_norm() < 1e-10);
    }

    #[test]
    fn waterfill_splits_equal_gains_evenly() {
        let p = waterfill(&[1.0, 1.0], 2.0);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!((p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn waterfill_drops_weak_mode_exactly_at_boundary() {
        // Gains 1 and 1/2 with unit budget: the weak mode gets exactly zero.
        let p = waterfill(&[1.0, 0.5], 1.0);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn waterfill_conserves_budget() {
        let p = waterfill(&[0.3, 2.0, 0.9], 5.0);
        let total: f64 = p.iter().sum();
        assert!((total - 5.0).abs() < 1e-9);
        assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn solve_real_roundtrip() {
        let a = vec![2.0, 1.0, -1.0, -3.0, -1.0, 2.0, -2.0, 1.0, 2.0];
        let b = vec![8.0, -11.0, -3.0];
        let x = solve_real(a, b).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-10);
        assert!((x[1] - 3.0).abs() < 1e-10);
        assert!((x[2] - -1.0).abs() < 1e-10);
    }
}
