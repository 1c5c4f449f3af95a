//! Small dense helpers: norms, power iteration, Cholesky.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::{Error, Result};

pub fn norm2(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub fn norm_inf(v: ArrayView1<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Largest eigenvalue of a symmetric positive semidefinite operator.
///
/// Stops when the relative change of the Rayleigh quotient drops below `tol`.
pub fn power_iteration<F>(apply: F, dim: usize, tol: f64, max_iter: usize) -> f64
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    if dim == 0 {
        return 0.0;
    }
    // deterministic start with no zero entries and no special symmetry
    let mut v = Array1::from_shape_fn(dim, |i| 1.0 + 0.1 * ((i * 7919 % 97) as f64) / 97.0);
    let n0 = norm2(v.view());
    v /= n0;
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = apply(v.view());
        let next = v.dot(&w);
        let nw = norm2(w.view());
        if nw == 0.0 {
            return 0.0;
        }
        v = w / nw;
        if (next - lambda).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) {
            return next.max(nw);
        }
        lambda = next;
    }
    lambda
}

/// lambda_max(X'X)/n by power iteration (tolerance 1e-8, at most 1000 steps).
pub fn gram_lambda_max(x: ArrayView2<f64>) -> f64 {
    let n = x.nrows() as f64;
    power_iteration(|v| x.t().dot(&x.dot(&v)) / n, x.ncols(), 1e-8, 1000)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidInput("cholesky needs a square matrix".into()));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) {
            return Err(Error::InvalidInput(format!(
                "matrix is not positive definite (pivot {j})"
            )));
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

/// Solve L z = b for lower-triangular L.
pub fn forward_solve(l: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = b.len();
    let mut z = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    z
}

/// log det of an SPD matrix from its Cholesky factor.
pub fn log_det_chol(l: ArrayView2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|d| d.ln()).sum::<f64>()
}
