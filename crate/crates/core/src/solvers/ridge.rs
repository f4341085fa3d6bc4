use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numerics::{mat_t_vec, ols_solve};

/// Cap on adaptive weights for (near-)zero ridge coefficients.
pub const W_MAX: f64 = 1e12;

/// Solves `(X^T X / n + lambda I) beta = X^T y / n`.
pub fn ridge_fit(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::DimensionMismatch(format!("X has {n} rows, y has {}", y.len())));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        if p >= n {
            return Err(Error::SingularSystem);
        }
        return ols_solve(x, y);
    }
    let nf = n as f64;
    let yv = DVector::from_column_slice(y);
    if p <= n {
        let mut a = x.tr_mul(x) / nf;
        for j in 0..p {
            a[(j, j)] += lambda;
        }
        let rhs = x.tr_mul(&yv) / nf;
        let chol = a.cholesky().ok_or(Error::SingularSystem)?;
        Ok(chol.solve(&rhs).as_slice().to_vec())
    } else {
        let mut k = x * x.transpose() / nf;
        for i in 0..n {
            k[(i, i)] += lambda;
        }
        let chol = k.cholesky().ok_or(Error::SingularSystem)?;
        let alpha = chol.solve(&yv) / nf;
        Ok(mat_t_vec(x, alpha.as_slice()))
    }
}

/// Ridge solutions for many penalties from one eigendecomposition:
/// `beta(lambda) = A diag(1 / (d + lambda)) e`. The primal form decomposes
/// `X^T X / n`; when `p > n` the dual form decomposes `X X^T / n`.
#[derive(Debug, Clone)]
pub struct RidgeSolver {
    a: DMatrix<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
}

impl RidgeSolver {
    pub fn new(x: &DMatrix<f64>, y: &[f64]) -> Self {
        let (n, p) = x.shape();
        let nf = n as f64;
        let yv = DVector::from_column_slice(y);
        if p <= n {
            let eig = SymmetricEigen::new(x.tr_mul(x) / nf);
            let c = x.tr_mul(&yv) / nf;
            let e = eig.eigenvectors.tr_mul(&c);
            Self { d: eig.eigenvalues.iter().map(|v| v.max(0.0)).collect(), e: e.as_slice().to_vec(), a: eig.eigenvectors }
        } else {
            let eig = SymmetricEigen::new(x * x.transpose() / nf);
            let e = eig.eigenvectors.tr_mul(&yv) / nf;
            let a = x.tr_mul(&eig.eigenvectors);
            Self { d: eig.eigenvalues.iter().map(|v| v.max(0.0)).collect(), e: e.as_slice().to_vec(), a }
        }
    }

    /// Requires `lambda > 0`.
    pub fn solve(&self, lambda: f64) -> Vec<f64> {
        let s: Vec<f64> = self.d.iter().zip(&self.e).map(|(d, e)| e / (d + lambda)).collect();
        (self.a.clone() * DVector::from_vec(s)).as_slice().to_vec()
    }

    /// Largest eigenvalue of `X^T X / n`.
    pub fn top_eigenvalue(&self) -> f64 {
        self.d.iter().cloned().fold(0.0, f64::max)
    }
}

/// `w_j = 1 / |beta_j|^q`, capped at [`W_MAX`].
pub fn adaptive_weights(beta_ridge: &[f64], q: f64) -> Result<Vec<f64>> {
    if !(q >= 1.0) {
        return Err(Error::InvalidParameter(format!("q must be >= 1, got {q}")));
    }
    Ok(beta_ridge
        .iter()
        .map(|b| {
            let w = 1.0 / b.abs().powf(q);
            if w.is_finite() {
                w.min(W_MAX)
            } else {
                W_MAX
            }
        })
        .collect())
}
