use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::{dot, ols_solve};

/// Relative residual norm below which a column counts as collinear.
const COLLINEAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RefitResult {
    /// Zero outside `used`.
    pub beta: Vec<f64>,
    pub used: Vec<usize>,
    /// Columns removed as linear combinations of earlier ones.
    pub dropped: Vec<usize>,
    pub truncated: bool,
}

/// Least squares on the selected columns of a centered design. Supports of
/// size `>= n` keep the `n - 1` largest `|ranking_j|` (ties by index).
pub fn ols_refit(x: &DMatrix<f64>, y: &[f64], support: &[usize], ranking: &[f64]) -> Result<RefitResult> {
    let (n, p) = x.shape();
    if n != y.len() || ranking.len() != p {
        return Err(Error::DimensionMismatch(format!("X is {n}x{p}, y has {}, ranking has {}", y.len(), ranking.len())));
    }
    if let Some(&bad) = support.iter().find(|&&j| j >= p) {
        return Err(Error::InvalidParameter(format!("support index {bad} out of range")));
    }
    let mut sel: Vec<usize> = support.to_vec();
    sel.sort_unstable();
    sel.dedup();
    let mut truncated = false;
    if sel.len() >= n {
        sel.sort_by(|&a, &b| ranking[b].abs().total_cmp(&ranking[a].abs()).then(a.cmp(&b)));
        sel.truncate(n.saturating_sub(1));
        sel.sort_unstable();
        truncated = true;
    }

    // Modified Gram-Schmidt in index order; a column whose residual is tiny
    // relative to its norm depends on the kept ones.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut used = Vec::new();
    let mut dropped = Vec::new();
    for &j in &sel {
        let col = &x.as_slice()[j * n..(j + 1) * n];
        let norm = dot(col, col).sqrt();
        let mut r = col.to_vec();
        for q in &basis {
            let c = dot(q, &r);
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
        let rn = dot(&r, &r).sqrt();
        if norm == 0.0 || rn <= COLLINEAR_TOL * norm {
            dropped.push(j);
            continue;
        }
        r.iter_mut().for_each(|v| *v /= rn);
        basis.push(r);
        used.push(j);
    }

    let mut beta = vec![0.0; p];
    if !used.is_empty() {
        let xs = DMatrix::from_fn(n, used.len(), |i, k| x[(i, used[k])]);
        let b = ols_solve(&xs, y)?;
        for (k, &j) in used.iter().enumerate() {
            beta[j] = b[k];
        }
    }
    Ok(RefitResult { beta, used, dropped, truncated })
}
