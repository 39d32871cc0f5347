//! Small dense linear algebra: symmetric eigenvalues by cyclic Jacobi
//! rotations, and Gaussian elimination for the Newton polish steps.
//!
//! The matrices here are tiny (tuple sizes up to a few dozen, chart
//! dimensions up to ~8), so O(p^3) methods with good constants beat any
//! library dependency.

use crate::error::{Error, Result};

/// Eigenvalues of a symmetric p x p matrix (row-major), sorted ascending.
///
/// Cyclic Jacobi with the standard stable rotation formulas; converges
/// quadratically once the off-diagonal mass is small. Accuracy is at the
/// level of a few ulps of the matrix norm, comfortably inside 1e-12 relative
/// for the sizes used here.
pub fn sym_eigenvalues(matrix: &[f64], p: usize) -> Result<Vec<f64>> {
    assert_eq!(matrix.len(), p * p, "matrix shape");
    if p == 0 {
        return Ok(Vec::new());
    }
    if p == 1 {
        return Ok(vec![matrix[0]]);
    }
    let mut a = matrix.to_vec();
    let idx = |i: usize, j: usize| i * p + j;
    const MAX_SWEEPS: usize = 64;
    for sweep in 0..MAX_SWEEPS {
        let mut off: f64 = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                off += a[idx(i, j)] * a[idx(i, j)];
            }
        }
        let anorm = frobenius_norm(&a);
        if off == 0.0 || off.sqrt() <= 1e-15 * anorm {
            let mut vals: Vec<f64> = (0..p).map(|i| a[idx(i, i)]).collect();
            vals.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
            return Ok(vals);
        }
        // Threshold strategy: early sweeps skip negligible rotations.
        let thresh = if sweep < 3 { 0.2 * off / (p * p) as f64 } else { 0.0 };
        for i in 0..p {
            for j in (i + 1)..p {
                let apq = a[idx(i, j)];
                if apq * apq <= thresh {
                    continue;
                }
                let app = a[idx(i, i)];
                let aqq = a[idx(j, j)];
                let diff = aqq - app;
                // After several sweeps, rotations that cannot change the
                // diagonal at working precision are set to zero directly.
                if sweep > 4 && apq.abs() < 1e-18 * (app.abs() + aqq.abs() + 1e-300) {
                    a[idx(i, j)] = 0.0;
                    a[idx(j, i)] = 0.0;
                    continue;
                }
                let theta = 0.5 * diff / apq;
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                a[idx(i, i)] = app - t * apq;
                a[idx(j, j)] = aqq + t * apq;
                a[idx(i, j)] = 0.0;
                a[idx(j, i)] = 0.0;
                for k in 0..p {
                    if k == i || k == j {
                        continue;
                    }
                    let aki = a[idx(k, i)];
                    let akj = a[idx(k, j)];
                    a[idx(k, i)] = aki - s * (akj + tau * aki);
                    a[idx(k, j)] = akj + s * (aki - tau * akj);
                    a[idx(i, k)] = a[idx(k, i)];
                    a[idx(j, k)] = a[idx(k, j)];
                }
            }
        }
    }
    let mut off: f64 = 0.0;
    for i in 0..p {
        for j in (i + 1)..p {
            off += a[idx(i, j)] * a[idx(i, j)];
        }
    }
    Err(Error::EigenNoConverge { sweeps: MAX_SWEEPS, offdiag: off.sqrt() })
}

/// Frobenius norm of a row-major matrix.
pub fn frobenius_norm(matrix: &[f64]) -> f64 {
    matrix.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves the n x n system `a x = b` in place by Gaussian elimination with
/// partial pivoting. Returns None when the pivot collapses (singular system).
pub fn solve_dense(a: &mut [f64], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    assert_eq!(a.len(), n * n, "matrix shape");
    let idx = |i: usize, j: usize| i * n + j;
    for col in 0..n {
        let (pivot_row, pivot_val) = (col..n)
            .map(|r| (r, a[idx(r, col)].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).expect("finite pivots"))?;
        if pivot_val < 1e-300 {
            return None;
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(idx(col, j), idx(pivot_row, j));
            }
            b.swap(col, pivot_row);
        }
        for r in (col + 1)..n {
            let factor = a[idx(r, col)] / a[idx(col, col)];
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[idx(r, j)] -= factor * a[idx(col, j)];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut sum = b[row];
        for j in (row + 1)..n {
            sum -= a[idx(row, j)] * x[j];
        }
        x[row] = sum / a[idx(row, row)];
    }
    Some(x)
}
