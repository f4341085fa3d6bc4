//! Distance correlation, its permutation test, forward selection driven by
//! it, and marginal screening rankers.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, ols_solve, RngStream};

pub const DEFAULT_PERMUTATIONS: usize = 200;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcorStat {
    pub dcov2: f64,
    pub dcor: f64,
    pub n: usize,
}

/// Double-centered pairwise distance matrix, row-major `n x n`.
#[derive(Debug, Clone)]
pub struct CenteredDistances {
    n: usize,
    values: Vec<f64>,
    /// Mean of squared entries.
    dvar2: f64,
}

impl CenteredDistances {
    pub fn new(u: &[f64]) -> Self {
        let n = u.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = (u[i] - u[j]).abs();
            }
        }
        let row_means: Vec<f64> = (0..n).map(|i| values[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
        let grand = row_means.iter().sum::<f64>() / n as f64;
        for i in 0..n {
            for j in 0..n {
                // Distances are symmetric, so column means equal row means.
                values[i * n + j] += grand - row_means[i] - row_means[j];
            }
        }
        let dvar2 = dot(&values, &values) / (n * n) as f64;
        Self { n, values, dvar2 }
    }

    fn inner(&self, other: &CenteredDistances) -> f64 {
        (dot(&self.values, &other.values) / (self.n * self.n) as f64).max(0.0)
    }

    /// `dcov^2` against `other` with its observations reordered by `perm`.
    fn inner_permuted(&self, other: &CenteredDistances, perm: &[usize]) -> f64 {
        let n = self.n;
        let mut total = 0.0;
        for i in 0..n {
            let row = &self.values[i * n..(i + 1) * n];
            let orow = &other.values[perm[i] * n..(perm[i] + 1) * n];
            total += row.iter().zip(perm).map(|(a, &pj)| a * orow[pj]).sum::<f64>();
        }
        (total / (n * n) as f64).max(0.0)
    }
}

fn stat_from(a: &CenteredDistances, b: &CenteredDistances) -> DcorStat {
    let dcov2 = a.inner(b);
    let denom = (a.dvar2 * b.dvar2).sqrt();
    let dcor = if denom > 0.0 { (dcov2 / denom).sqrt().min(1.0) } else { 0.0 };
    DcorStat { dcov2, dcor, n: a.n }
}

pub fn dcor(u: &[f64], v: &[f64]) -> Result<DcorStat> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!("lengths {} and {}", u.len(), v.len())));
    }
    if u.len() < 2 {
        return Err(Error::InvalidParameter("distance correlation needs n >= 2".into()));
    }
    Ok(stat_from(&CenteredDistances::new(u), &CenteredDistances::new(v)))
}

/// Permutation p-value `(1 + #{dcov2_perm >= dcov2_obs}) / (B + 1)`.
pub fn independence_test(eps: &[f64], xj: &[f64], permutations: usize, stream: &RngStream) -> Result<f64> {
    if eps.len() != xj.len() {
        return Err(Error::DimensionMismatch(format!("lengths {} and {}", eps.len(), xj.len())));
    }
    if permutations < 99 {
        return Err(Error::InvalidParameter(format!("at least 99 permutations required, got {permutations}")));
    }
    let a = CenteredDistances::new(eps);
    let b = CenteredDistances::new(xj);
    Ok(permutation_p_value(&a, &b, permutations, stream))
}

fn permutation_p_value(a: &CenteredDistances, b: &CenteredDistances, permutations: usize, stream: &RngStream) -> f64 {
    let observed = a.inner(b);
    let mut rng = stream.rng();
    let mut perm: Vec<usize> = (0..a.n).collect();
    let mut hits = 0usize;
    for _ in 0..permutations {
        perm.shuffle(&mut rng);
        if a.inner_permuted(b, &perm) >= observed {
            hits += 1;
        }
    }
    (1 + hits) as f64 / (permutations + 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcvsResult {
    /// Selected columns in order of entry.
    pub support: Vec<usize>,
    pub p_values: Vec<f64>,
    /// The last accepted column made the refit singular; selection stopped there.
    pub singular_refit: bool,
}

/// Forward selection: add the column with largest `dcor` to the current
/// residual while its independence test rejects at `alpha`; residuals come
/// from the OLS refit of `y` on the selected columns.
pub fn dcvs_select(x: &DMatrix<f64>, y: &[f64], alpha: f64, permutations: usize, stream: &RngStream) -> Result<DcvsResult> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::DimensionMismatch(format!("X has {n} rows, y has {}", y.len())));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if permutations < 99 {
        return Err(Error::InvalidParameter(format!("at least 99 permutations required, got {permutations}")));
    }
    let columns: Vec<CenteredDistances> = (0..p).map(|j| CenteredDistances::new(&x.as_slice()[j * n..(j + 1) * n])).collect();
    let mut remaining: Vec<usize> = (0..p).collect();
    let mut result = DcvsResult { support: Vec::new(), p_values: Vec::new(), singular_refit: false };
    let mut eps = y.to_vec();
    let cap = p.min(n.saturating_sub(1));
    let mut step = 0u64;
    while !remaining.is_empty() && result.support.len() < cap {
        let a = CenteredDistances::new(&eps);
        let mut best: Option<(usize, f64)> = None;
        for (pos, &j) in remaining.iter().enumerate() {
            let d = stat_from(&a, &columns[j]).dcor;
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((pos, d));
            }
        }
        let (pos, _) = best.expect("remaining is nonempty");
        let j = remaining[pos];
        let pv = permutation_p_value(&a, &columns[j], permutations, &stream.child(step));
        step += 1;
        if pv > alpha {
            break;
        }
        let mut trial = result.support.clone();
        trial.push(j);
        let xm = DMatrix::from_fn(n, trial.len(), |i, k| x[(i, trial[k])]);
        let beta = match ols_solve(&xm, y) {
            Ok(b) => b,
            Err(Error::SingularSystem) => {
                result.singular_refit = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let fitted = &xm * nalgebra::DVector::from_vec(beta);
        eps = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
        remaining.remove(pos);
        result.support.push(j);
        result.p_values.push(pv);
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScreenMethod {
    R2,
    Dc,
    Pls,
}

impl ScreenMethod {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r2" => Some(Self::R2),
            "dc" => Some(Self::Dc),
            "pls" => Some(Self::Pls),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::R2 => "r2",
            Self::Dc => "dc",
            Self::Pls => "pls",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenRanking {
    pub method: ScreenMethod,
    pub scores: Vec<f64>,
    /// Column indices by decreasing score; ties keep column order.
    pub order: Vec<usize>,
}

/// Marginal relevance scores. PLS uses the magnitudes of the first PLS
/// weight vector `X^T y / ||X^T y||`.
pub fn screen_rank(x: &DMatrix<f64>, y: &[f64], method: ScreenMethod) -> Result<ScreenRanking> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::DimensionMismatch(format!("X has {n} rows, y has {}", y.len())));
    }
    let ym = y.iter().sum::<f64>() / n as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - ym).collect();
    let col = |j: usize| -> Vec<f64> {
        let c = &x.as_slice()[j * n..(j + 1) * n];
        let m = c.iter().sum::<f64>() / n as f64;
        c.iter().map(|v| v - m).collect()
    };
    let scores: Vec<f64> = match method {
        ScreenMethod::R2 => {
            let syy = dot(&yc, &yc);
            let mut s = Vec::with_capacity(p);
            for j in 0..p {
                let c = col(j);
                let sxx = dot(&c, &c);
                if sxx <= 0.0 {
                    return Err(Error::ConstantColumn { column: j });
                }
                let sxy = dot(&c, &yc);
                s.push(if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 0.0 });
            }
            s
        }
        ScreenMethod::Dc => {
            let a = CenteredDistances::new(y);
            (0..p).map(|j| stat_from(&a, &CenteredDistances::new(&col(j))).dcor).collect()
        }
        ScreenMethod::Pls => {
            let w: Vec<f64> = (0..p).map(|j| dot(&col(j), &yc)).collect();
            let norm = dot(&w, &w).sqrt();
            w.iter().map(|v| if norm > 0.0 { v.abs() / norm } else { 0.0 }).collect()
        }
    };
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(ScreenRanking { method, scores, order })
}
