//! Penalized least-squares solvers.
//!
//! Every solver minimizes `(1/(2n)) ||y - X beta||^2 + lambda * pen(beta)` on
//! centered data. The classical `sum (y - x beta)^2 + lambda' ||beta||_1`
//! scaling corresponds to `lambda' = 2 n lambda`.

mod lasso;
mod problem;
mod refit;
mod ridge;
mod scad;
mod scaled;

pub use lasso::{
    lasso_cd, lasso_cd_problem, lasso_path, lasso_traced, orthogonal_closed_form, relaxed_from_stage1,
    relaxed_lasso,
};
pub use problem::{CdProblem, CdState, GRAM_MAX_P};
pub use refit::{ols_refit, RefitResult};
pub use ridge::{adaptive_weights, ridge_fit, RidgeSolver, W_MAX};
pub use scad::{scad_fit, scad_objective, scad_path, scad_penalty, scad_univariate, SCAD_A};
pub use scaled::{scaled_lasso, scaled_lasso_problem, sqrt_lasso, sqrt_lasso_problem, universal_lambda0, ScaledFit, ScaledStep};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum PenaltyKind {
    Lasso,
    WeightedLasso(Vec<f64>),
    Scad { a: f64 },
    Ridge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub lambda: f64,
}

impl PenaltySpec {
    pub fn lasso(lambda: f64) -> Self {
        Self { kind: PenaltyKind::Lasso, lambda }
    }

    pub fn weighted(weights: Vec<f64>, lambda: f64) -> Self {
        Self { kind: PenaltyKind::WeightedLasso(weights), lambda }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        match &self.kind {
            PenaltyKind::WeightedLasso(w) => {
                if w.len() != p {
                    return Err(Error::DimensionMismatch(format!("{} weights for {} columns", w.len(), p)));
                }
                if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
                }
            }
            PenaltyKind::Scad { a } if !(*a > 2.0) => {
                return Err(Error::InvalidParameter(format!("SCAD requires a > 2, got {a}")));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverControl {
    pub tol: f64,
    pub max_iter: usize,
    pub active_set_cycling: bool,
}

impl Default for SolverControl {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 100_000, active_set_cycling: true }
    }
}

impl SolverControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter("tol must be > 0 and max_iter >= 1".into()));
        }
        Ok(())
    }
}

/// Invariant: `support` is exactly the nonzero pattern of `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub support: Vec<usize>,
    pub lambda: f64,
    pub refit_beta: Option<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn new(beta: Vec<f64>, lambda: f64, iterations: usize, converged: bool) -> Self {
        let support = support_of(&beta);
        Self { beta, support, lambda, refit_beta: None, iterations, converged }
    }

    pub fn zero(p: usize, lambda: f64) -> Self {
        Self::new(vec![0.0; p], lambda, 0, true)
    }
}

pub fn support_of(beta: &[f64]) -> Vec<usize> {
    beta.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| j).collect()
}

/// `sign(z) * max(|z| - gamma, 0)`.
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// One coordinate pass over `idx`; returns the largest absolute change.
fn sweep<U, I>(prob: &CdProblem, state: &mut CdState, beta: &mut [f64], idx: I, update: &U) -> f64
where
    U: Fn(usize, f64, f64) -> f64,
    I: IntoIterator<Item = usize>,
{
    let mut dmax = 0.0_f64;
    for j in idx {
        let v = prob.col_sq(j);
        if v <= 0.0 {
            if beta[j] != 0.0 {
                prob.apply(state, j, -beta[j]);
                beta[j] = 0.0;
            }
            continue;
        }
        let z = prob.grad(state, j) + v * beta[j];
        let b = update(j, z, v);
        let d = b - beta[j];
        if d != 0.0 {
            prob.apply(state, j, d);
            beta[j] = b;
            dmax = dmax.max(d.abs());
        }
    }
    dmax
}

/// Largest `v_j |update_j - beta_j|` from a freshly computed state. For the
/// L1 penalty this equals the KKT violation.
fn stationarity_gap<U>(prob: &CdProblem, state: &CdState, beta: &[f64], update: &U) -> f64
where
    U: Fn(usize, f64, f64) -> f64,
{
    let mut gap = 0.0_f64;
    for (j, bj) in beta.iter().enumerate() {
        let v = prob.col_sq(j);
        if v <= 0.0 {
            continue;
        }
        let z = prob.grad(state, j) + v * bj;
        gap = gap.max(v * (update(j, z, v) - bj).abs());
    }
    gap
}

/// Cyclic coordinate descent. `update(j, z, v)` returns the minimizer of
/// `(v/2) b^2 - z b + pen_j(b)`. Stops when a sweep moves no coefficient by
/// more than `tol` and a fresh stationarity check also passes `tol`.
fn coordinate_descent<U>(
    prob: &CdProblem,
    beta: &mut [f64],
    control: &SolverControl,
    update: U,
    mut on_sweep: Option<&mut dyn FnMut(&[f64])>,
) -> (usize, bool)
where
    U: Fn(usize, f64, f64) -> f64,
{
    let p = prob.p();
    let mut state = prob.state(beta);
    let mut iterations = 0;
    loop {
        let dmax = sweep(prob, &mut state, beta, 0..p, &update);
        iterations += 1;
        if let Some(f) = on_sweep.as_deref_mut() {
            f(beta);
        }
        if dmax <= control.tol {
            state = prob.state(beta);
            if stationarity_gap(prob, &state, beta, &update) <= control.tol {
                return (iterations, true);
            }
        }
        if iterations >= control.max_iter {
            return (iterations, false);
        }
        if control.active_set_cycling {
            loop {
                let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
                if active.is_empty() {
                    break;
                }
                let d = sweep(prob, &mut state, beta, active, &update);
                iterations += 1;
                if let Some(f) = on_sweep.as_deref_mut() {
                    f(beta);
                }
                if d <= control.tol || iterations >= control.max_iter {
                    break;
                }
            }
        }
    }
}
