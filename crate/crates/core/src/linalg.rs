//! Dense symmetric-positive-definite linear algebra: Cholesky factorization,
//! triangular solves, block inverse updates, and minimum-eigenvalue
//! estimation.
//!
//! Matrices are `ndarray::Array2<f64>` in standard (row-major) layout. All
//! operations are pure functions on immutable inputs and safe to call from
//! many threads.

use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

/// Default pivot threshold below which a factorization is declared singular.
pub const PIVOT_TOL: f64 = 1e-12;
/// Default tolerance for the symmetry pre-check, relative to the largest entry.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Iteration cap for inverse power iteration.
const POWER_ITER_CAP: usize = 10_000;
/// Sweep cap for the Jacobi eigenvalue method.
const JACOBI_SWEEP_CAP: usize = 100;
/// Dimension at or below which `min_eigenvalue` uses Jacobi sweeps.
const JACOBI_DIM_LIMIT: usize = 64;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite: pivot {value:.3e} at index {index}")]
    NotPositiveDefinite { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("Schur complement is singular: pivot {value:.3e} at index {index}")]
    SingularSchurComplement { index: usize, value: f64 },
    #[error("eigenvalue iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |a[{i},{j}] - a[{j},{i}]| = {diff:.3e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },
    #[error("matrix contains a non-finite entry at ({i},{j})")]
    NonFinite { i: usize, j: usize },
}

/// Lower-triangular Cholesky factor of an SPD matrix.
///
/// Invariant: `lower * lower^T` reconstructs the factored matrix, and every
/// diagonal entry of `lower` is strictly positive.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: Array2<f64>,
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    /// Solve `A x = b` for a matrix right-hand side, where `A` is the
    /// factored matrix.
    pub fn solve(&self, b: &Array2<f64>) -> Result<Array2<f64>, LinalgError> {
        spd_solve(self, b)
    }

    /// Solve `A x = b` for a vector right-hand side.
    pub fn solve_vec(&self, b: &Array1<f64>) -> Result<Array1<f64>, LinalgError> {
        let n = self.dim();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "rhs has {} rows, factor has dimension {}",
                b.len(),
                n
            )));
        }
        let mut x = b.to_owned();
        forward_substitute(&self.lower, x.as_slice_mut().unwrap());
        back_substitute_transposed(&self.lower, x.as_slice_mut().unwrap());
        Ok(x)
    }

    /// Inverse of the factored matrix, via solves against the identity.
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.dim();
        let mut inv = Array2::<f64>::eye(n);
        for mut col in inv.columns_mut() {
            let mut buf: Vec<f64> = col.iter().copied().collect();
            forward_substitute(&self.lower, &mut buf);
            back_substitute_transposed(&self.lower, &mut buf);
            for (dst, src) in col.iter_mut().zip(buf.iter()) {
                *dst = *src;
            }
        }
        // Exact symmetry keeps downstream updates well behaved.
        symmetrize(&mut inv);
        inv
    }

    /// Inverse transpose of the lower factor, `L^{-T}`, as a dense matrix.
    pub fn inverse_transpose_factor(&self) -> Array2<f64> {
        let n = self.dim();
        // Columns of L^{-1} from forward substitution against e_k, then transpose.
        let mut out = Array2::<f64>::zeros((n, n));
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            forward_substitute(&self.lower, &mut e);
            for i in 0..n {
                out[[k, i]] = e[i];
            }
        }
        out
    }
}

fn check_square_symmetric(a: &ArrayView2<f64>, tol: f64) -> Result<(), LinalgError> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(LinalgError::NotSquare { rows, cols });
    }
    let mut max_abs = 0.0f64;
    for ((i, j), &v) in a.indexed_iter() {
        if !v.is_finite() {
            return Err(LinalgError::NonFinite { i, j });
        }
        max_abs = max_abs.max(v.abs());
    }
    let scale = 1.0f64.max(max_abs);
    for i in 0..rows {
        for j in (i + 1)..cols {
            let diff = (a[[i, j]] - a[[j, i]]).abs();
            if diff > tol * scale {
                return Err(LinalgError::NotSymmetric { i, j, diff });
            }
        }
    }
    Ok(())
}

fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = avg;
            a[[j, i]] = avg;
        }
    }
}

/// Unpivoted Cholesky factorization of a symmetric positive-definite matrix.
///
/// Fails with [`LinalgError::NotPositiveDefinite`] when a pivot drops to
/// [`PIVOT_TOL`] or below, which signals rank deficiency (e.g. collinear
/// columns with a zero ridge).
pub fn spd_factorize(a: &Array2<f64>) -> Result<SpdFactor, LinalgError> {
    spd_factorize_with(a, PIVOT_TOL, SYMMETRY_TOL)
}

/// [`spd_factorize`] with explicit pivot and symmetry tolerances.
pub fn spd_factorize_with(
    a: &Array2<f64>,
    pivot_tol: f64,
    symmetry_tol: f64,
) -> Result<SpdFactor, LinalgError> {
    check_square_symmetric(&a.view(), symmetry_tol)?;
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if diag <= pivot_tol {
            return Err(LinalgError::NotPositiveDefinite {
                index: j,
                value: diag,
            });
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Ok(SpdFactor { lower: l })
}

fn forward_substitute(l: &Array2<f64>, x: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
}

fn back_substitute_transposed(l: &Array2<f64>, x: &mut [f64]) {
    let n = l.nrows();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
}

/// Solve `A X = B` column by column given the Cholesky factor of `A`.
pub fn spd_solve(f: &SpdFactor, b: &Array2<f64>) -> Result<Array2<f64>, LinalgError> {
    let n = f.dim();
    if b.nrows() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "rhs has {} rows, factor has dimension {}",
            b.nrows(),
            n
        )));
    }
    let mut x = b.to_owned();
    for mut col in x.columns_mut() {
        let mut buf: Vec<f64> = col.iter().copied().collect();
        forward_substitute(&f.lower, &mut buf);
        back_substitute_transposed(&f.lower, &mut buf);
        for (dst, src) in col.iter_mut().zip(buf.iter()) {
            *dst = *src;
        }
    }
    Ok(x)
}

/// Grow the inverse of an SPD matrix by one block using the matrix inversion
/// lemma.
///
/// Given `inv_old = A^{-1}` for the K x K top-left block of
/// `M = [[A, B], [B^T, D]]`, the K x m cross block `B`, and the m x m corner
/// `D`, returns `M^{-1}` in O(K^2 m + K m^2 + m^3) instead of O((K+m)^3).
/// `K = 0` degenerates to a plain inverse of `D`.
pub fn block_inverse_update(
    inv_old: &Array2<f64>,
    cross: &Array2<f64>,
    corner: &Array2<f64>,
) -> Result<Array2<f64>, LinalgError> {
    let k = inv_old.nrows();
    let m = corner.nrows();
    if inv_old.ncols() != k {
        return Err(LinalgError::NotSquare {
            rows: inv_old.nrows(),
            cols: inv_old.ncols(),
        });
    }
    if corner.ncols() != m {
        return Err(LinalgError::NotSquare {
            rows: corner.nrows(),
            cols: corner.ncols(),
        });
    }
    if cross.nrows() != k || cross.ncols() != m {
        return Err(LinalgError::DimensionMismatch(format!(
            "cross block is {}x{}, expected {}x{}",
            cross.nrows(),
            cross.ncols(),
            k,
            m
        )));
    }

    // Schur complement S = D - B^T A^{-1} B.
    let ainv_b = if k > 0 {
        inv_old.dot(cross)
    } else {
        Array2::zeros((0, m))
    };
    let mut schur = corner.clone();
    if k > 0 {
        schur = schur - cross.t().dot(&ainv_b);
    }
    symmetrize(&mut schur);
    let schur_inv = match spd_factorize(&schur) {
        Ok(f) => f.inverse(),
        Err(LinalgError::NotPositiveDefinite { index, value }) => {
            return Err(LinalgError::SingularSchurComplement { index, value })
        }
        Err(e) => return Err(e),
    };

    let total = k + m;
    let mut out = Array2::<f64>::zeros((total, total));
    if k > 0 {
        // Top-left: A^{-1} + (A^{-1} B) S^{-1} (A^{-1} B)^T
        let corr = ainv_b.dot(&schur_inv).dot(&ainv_b.t());
        for i in 0..k {
            for j in 0..k {
                out[[i, j]] = inv_old[[i, j]] + corr[[i, j]];
            }
        }
        // Off-diagonal: -(A^{-1} B) S^{-1}
        let off = ainv_b.dot(&schur_inv);
        for i in 0..k {
            for j in 0..m {
                out[[i, k + j]] = -off[[i, j]];
                out[[k + j, i]] = -off[[i, j]];
            }
        }
    }
    for i in 0..m {
        for j in 0..m {
            out[[k + i, k + j]] = schur_inv[[i, j]];
        }
    }
    Ok(out)
}

/// Minimum eigenvalue of a symmetric matrix, within `tol` relative error.
///
/// Uses cyclic Jacobi sweeps up to dimension 64 (robust for any symmetric
/// input) and inverse power iteration with shift 0 above that (the matrix
/// must then be positive definite, which holds for regularized covariance
/// matrices).
pub fn min_eigenvalue(a: &Array2<f64>, tol: f64) -> Result<f64, LinalgError> {
    assert!(tol > 0.0, "tolerance must be positive");
    check_square_symmetric(&a.view(), SYMMETRY_TOL)?;
    let n = a.nrows();
    if n == 0 {
        return Err(LinalgError::DimensionMismatch(
            "matrix is empty".to_string(),
        ));
    }
    if n <= JACOBI_DIM_LIMIT {
        jacobi_min_eigenvalue(a, tol)
    } else {
        inverse_power_min_eigenvalue(a, tol)
    }
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += 2.0 * a[[i, j]] * a[[i, j]];
        }
    }
    s.sqrt()
}

fn jacobi_min_eigenvalue(a: &Array2<f64>, tol: f64) -> Result<f64, LinalgError> {
    let n = a.nrows();
    let mut m = a.clone();
    symmetrize(&mut m);
    let frob = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    if frob == 0.0 {
        return Ok(0.0);
    }
    // Converge the off-diagonal mass to (near) machine precision; Jacobi is
    // quadratically convergent so the cap is generous.
    let target = frob * tol.min(1e-13);
    for _ in 0..JACOBI_SWEEP_CAP {
        if off_diagonal_norm(&m) <= target {
            let min = (0..n).map(|i| m[[i, i]]).fold(f64::INFINITY, f64::min);
            return Ok(min);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q.
                for i in 0..n {
                    let mip = m[[i, p]];
                    let miq = m[[i, q]];
                    m[[i, p]] = c * mip - s * miq;
                    m[[i, q]] = s * mip + c * miq;
                }
                for i in 0..n {
                    let mpi = m[[p, i]];
                    let mqi = m[[q, i]];
                    m[[p, i]] = c * mpi - s * mqi;
                    m[[q, i]] = s * mpi + c * mqi;
                }
            }
        }
    }
    if off_diagonal_norm(&m) <= frob * tol {
        let min = (0..n).map(|i| m[[i, i]]).fold(f64::INFINITY, f64::min);
        return Ok(min);
    }
    Err(LinalgError::NoConvergence {
        iterations: JACOBI_SWEEP_CAP,
    })
}

fn inverse_power_min_eigenvalue(a: &Array2<f64>, tol: f64) -> Result<f64, LinalgError> {
    let n = a.nrows();
    let factor = spd_factorize(a)?;
    // Deterministic start spread across all coordinates.
    let mut v: Array1<f64> = Array1::from_iter((0..n).map(|i| 1.0 + (i as f64 + 1.0).sin() * 0.1));
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm);
    let mut prev = f64::INFINITY;
    for it in 0..POWER_ITER_CAP {
        let mut w = factor.solve_vec(&v)?;
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return Err(LinalgError::NoConvergence { iterations: it });
        }
        w.mapv_inplace(|x| x / norm);
        let av = a.dot(&w);
        let lambda = w.dot(&av);
        if (lambda - prev).abs() <= tol * lambda.abs().max(f64::MIN_POSITIVE) {
            return Ok(lambda);
        }
        prev = lambda;
        v = w;
    }
    Err(LinalgError::NoConvergence {
        iterations: POWER_ITER_CAP,
    })
}
