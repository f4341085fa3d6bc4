//! Penalty grids, K-fold cross-validation and BIC selection.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mat_t_vec, mat_vec, RngStream};
use crate::solvers::ols_refit;

pub const DEFAULT_N_LAMBDA: usize = 100;
pub const DEFAULT_FOLDS: usize = 10;

/// Strictly decreasing, log-uniform from `lambda_max` to `eps_ratio * lambda_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
    pub lambda_max: f64,
    pub eps_ratio: f64,
}

pub fn default_eps_ratio(n: usize, p: usize) -> f64 {
    if n > p {
        1e-4
    } else {
        1e-2
    }
}

pub fn log_grid(lambda_max: f64, n_lambda: usize, eps_ratio: f64) -> Result<LambdaGrid> {
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::ZeroResponse);
    }
    if n_lambda == 0 || !(eps_ratio > 0.0 && eps_ratio < 1.0) {
        return Err(Error::InvalidParameter(format!("grid needs n_lambda >= 1 and eps in (0,1), got {n_lambda}, {eps_ratio}")));
    }
    let values = if n_lambda == 1 {
        vec![lambda_max]
    } else {
        let step = eps_ratio.ln() / (n_lambda - 1) as f64;
        (0..n_lambda).map(|k| lambda_max * (step * k as f64).exp()).collect()
    };
    Ok(LambdaGrid { values, lambda_max, eps_ratio })
}

/// L1 grid with `lambda_max = ||X^T y||_inf / n` on centered data.
pub fn lambda_grid(x: &DMatrix<f64>, y: &[f64], n_lambda: usize, eps_ratio: Option<f64>) -> Result<LambdaGrid> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::DimensionMismatch(format!("X has {n} rows, y has {}", y.len())));
    }
    let lmax = mat_t_vec(x, y).iter().fold(0.0_f64, |a, v| a.max(v.abs())) / n as f64;
    log_grid(lmax, n_lambda, eps_ratio.unwrap_or_else(|| default_eps_ratio(n, p)))
}

/// Fold label per observation: a seeded permutation dealt round-robin.
pub fn make_folds(n: usize, k: usize, stream: &RngStream) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::FoldTooSmall { fold: n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream.rng());
    let mut folds = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        folds[i] = pos % k;
    }
    Ok(folds)
}

/// Invariant: `mean_error[idx_min]` is the minimum and `idx_1se <= idx_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub mean_error: Vec<f64>,
    pub se: Vec<f64>,
    pub idx_min: usize,
    pub idx_1se: usize,
    pub folds: Vec<usize>,
}

/// Training rows centered on their own means, plus those means.
pub struct FoldData {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub x_mean: Vec<f64>,
    pub y_mean: f64,
}

pub fn fold_training(x: &DMatrix<f64>, y: &[f64], rows: &[usize]) -> FoldData {
    let p = x.ncols();
    let m = rows.len() as f64;
    let mut xt = DMatrix::from_fn(rows.len(), p, |i, j| x[(rows[i], j)]);
    let mut x_mean = vec![0.0; p];
    for (j, mut c) in xt.column_iter_mut().enumerate() {
        let mu = c.sum() / m;
        c.add_scalar_mut(-mu);
        x_mean[j] = mu;
    }
    let y_mean = rows.iter().map(|&i| y[i]).sum::<f64>() / m;
    let yt = rows.iter().map(|&i| y[i] - y_mean).collect();
    FoldData { x: xt, y: yt, x_mean, y_mean }
}

/// Cross-validates `n_candidates` models ordered from most to least
/// penalized. `fit` receives a centered training fold and returns one
/// coefficient vector per candidate (`None` marks a failed fit, scored as
/// infinite error). Errors are averaged per observation; the standard error
/// weights fold means by fold size.
pub fn kfold_cv<F>(x: &DMatrix<f64>, y: &[f64], folds: &[usize], k: usize, n_candidates: usize, mut fit: F) -> Result<CvSummary>
where
    F: FnMut(&FoldData) -> Result<Vec<Option<Vec<f64>>>>,
{
    let n = x.nrows();
    if folds.len() != n || y.len() != n {
        return Err(Error::DimensionMismatch("fold labels, X and y must share n".into()));
    }
    let mut fold_err = vec![vec![0.0; n_candidates]; k];
    let mut fold_size = vec![0usize; k];
    for f in 0..k {
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        if test.is_empty() || train.len() < 2 {
            return Err(Error::FoldTooSmall { fold: f });
        }
        fold_size[f] = test.len();
        let data = fold_training(x, y, &train);
        let betas = fit(&data)?;
        let xtest = DMatrix::from_fn(test.len(), x.ncols(), |i, j| x[(test[i], j)] - data.x_mean[j]);
        for c in 0..n_candidates {
            fold_err[f][c] = match betas.get(c).and_then(|b| b.as_ref()) {
                Some(beta) => {
                    let pred = mat_vec(&xtest, beta);
                    let sse: f64 = test.iter().zip(&pred).map(|(&i, pv)| (y[i] - data.y_mean - pv).powi(2)).sum();
                    sse / test.len() as f64
                }
                None => f64::INFINITY,
            };
        }
    }
    let total: f64 = fold_size.iter().sum::<usize>() as f64;
    let mut mean_error = vec![0.0; n_candidates];
    let mut se = vec![0.0; n_candidates];
    for c in 0..n_candidates {
        let m: f64 = (0..k).map(|f| fold_err[f][c] * fold_size[f] as f64).sum::<f64>() / total;
        mean_error[c] = m;
        se[c] = if m.is_finite() {
            let var: f64 = (0..k).map(|f| fold_size[f] as f64 * (fold_err[f][c] - m).powi(2)).sum::<f64>() / total;
            (var / (k - 1) as f64).sqrt()
        } else {
            f64::INFINITY
        };
    }
    let idx_min = argmin_first(&mean_error).ok_or_else(|| Error::InvalidParameter("every candidate failed in cross-validation".into()))?;
    let idx_1se = one_se_index(&mean_error, &se, idx_min);
    Ok(CvSummary { mean_error, se, idx_min, idx_1se, folds: folds.to_vec() })
}

/// First index attaining the minimum finite value.
fn argmin_first(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, x) in v.iter().enumerate() {
        if x.is_finite() && best.is_none_or(|b| *x < v[b]) {
            best = Some(i);
        }
    }
    best
}

/// Most penalized candidate whose error is within one standard error of the minimum.
pub fn one_se_index(mean_error: &[f64], se: &[f64], idx_min: usize) -> usize {
    let bound = mean_error[idx_min] + se[idx_min];
    (0..=idx_min).find(|&c| mean_error[c] <= bound).unwrap_or(idx_min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicSummary {
    pub values: Vec<f64>,
    pub df: Vec<usize>,
    pub chosen: usize,
}

/// `n ln(RSS/n) + ln(n) df` with `df` the support size and RSS that of the
/// OLS refit on the candidate's support; ties go to the earlier (more
/// penalized) candidate. `None` entries are skipped.
pub fn bic_select(x: &DMatrix<f64>, y: &[f64], betas: &[Option<Vec<f64>>]) -> Result<BicSummary> {
    let n = x.nrows();
    if betas.is_empty() {
        return Err(Error::InvalidParameter("BIC needs at least one candidate".into()));
    }
    let nf = n as f64;
    let mut values = Vec::with_capacity(betas.len());
    let mut df = Vec::with_capacity(betas.len());
    for b in betas {
        match b {
            Some(beta) => {
                let support: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
                let fit = mat_vec(x, &ols_refit(x, y, &support, beta)?.beta);
                let rss: f64 = y.iter().zip(&fit).map(|(a, f)| (a - f).powi(2)).sum();
                let d = beta.iter().filter(|v| **v != 0.0).count();
                values.push(nf * (rss.max(f64::MIN_POSITIVE) / nf).ln() + nf.ln() * d as f64);
                df.push(d);
            }
            None => {
                values.push(f64::INFINITY);
                df.push(0);
            }
        }
    }
    let chosen = argmin_first(&values).ok_or_else(|| Error::InvalidParameter("no BIC candidate could be fitted".into()))?;
    Ok(BicSummary { values, df, chosen })
}
