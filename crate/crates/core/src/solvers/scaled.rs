use nalgebra::DMatrix;

use super::{lasso_cd_problem, CdProblem, FitResult, SolverControl};
use crate::error::{Error, Result};

/// Outer iteration cap for the noise-level fixed point.
const MAX_OUTER: usize = 1000;

/// `sqrt(2 ln p / n)`.
pub fn universal_lambda0(n: usize, p: usize) -> f64 {
    (2.0 * (p.max(2) as f64).ln() / n as f64).sqrt()
}

/// One outer step: noise level, penalty used, and the lasso objective at that
/// penalty before and after the inner solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledStep {
    pub sigma: f64,
    pub lambda: f64,
    pub objective_old: f64,
    pub objective_new: f64,
}

#[derive(Debug, Clone)]
pub struct ScaledFit {
    pub fit: FitResult,
    pub sigma: f64,
    pub trace: Vec<ScaledStep>,
}

pub fn scaled_lasso(x: &DMatrix<f64>, y: &[f64], lambda0: f64, control: &SolverControl) -> Result<(FitResult, f64)> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!("X has {} rows, y has {}", x.nrows(), y.len())));
    }
    control.validate()?;
    let prob = CdProblem::new(x, y);
    let out = scaled_lasso_problem(&prob, lambda0, None, control)?;
    Ok((out.fit, out.sigma))
}

/// Alternates `sigma = ||y - X beta|| / sqrt(n)` and `beta = lasso(sigma * lambda0)`
/// until the relative change in `sigma` is at most `tol`.
pub fn scaled_lasso_problem(prob: &CdProblem, lambda0: f64, warm: Option<&[f64]>, control: &SolverControl) -> Result<ScaledFit> {
    if !(lambda0 >= 0.0) || !lambda0.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda0 must be finite and >= 0, got {lambda0}")));
    }
    let floor = 1e-10 * prob.yty().sqrt();
    if prob.yty() == 0.0 {
        return Err(Error::DegenerateSigma);
    }
    let p = prob.p();
    let mut beta = warm.map(|w| w.to_vec()).unwrap_or_else(|| vec![0.0; p]);
    let mut sigma = (2.0 * prob.half_mse(&beta)).sqrt();
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..MAX_OUTER {
        if !(sigma > floor) {
            return Err(Error::DegenerateSigma);
        }
        let lambda = sigma * lambda0;
        let l1_old: f64 = beta.iter().map(|b| b.abs()).sum();
        let objective_old = prob.half_mse(&beta) + lambda * l1_old;
        let fit = lasso_cd_problem(prob, None, lambda, Some(&beta), control);
        iterations += fit.iterations;
        if !fit.converged {
            return Err(Error::NotConverged { iterations });
        }
        let l1_new: f64 = fit.beta.iter().map(|b| b.abs()).sum();
        let mse_new = prob.half_mse(&fit.beta);
        trace.push(ScaledStep { sigma, lambda, objective_old, objective_new: mse_new + lambda * l1_new });
        let sigma_new = (2.0 * mse_new).sqrt();
        beta = fit.beta;
        let done = (sigma_new - sigma).abs() <= control.tol * sigma;
        sigma = sigma_new;
        if done {
            if !(sigma > floor) {
                return Err(Error::DegenerateSigma);
            }
            let fit = FitResult::new(beta, sigma * lambda0, iterations, true);
            return Ok(ScaledFit { fit, sigma, trace });
        }
    }
    Err(Error::NotConverged { iterations })
}

/// Minimizes `||y - X beta|| + lambda ||beta||_1` through the scaled-lasso
/// fixed point with `lambda0 = lambda / sqrt(n)`.
pub fn sqrt_lasso(x: &DMatrix<f64>, y: &[f64], lambda: f64, control: &SolverControl) -> Result<FitResult> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!("X has {} rows, y has {}", x.nrows(), y.len())));
    }
    control.validate()?;
    let prob = CdProblem::new(x, y);
    sqrt_lasso_problem(&prob, lambda, None, control)
}

pub fn sqrt_lasso_problem(prob: &CdProblem, lambda: f64, warm: Option<&[f64]>, control: &SolverControl) -> Result<FitResult> {
    let lambda0 = lambda / (prob.n() as f64).sqrt();
    let mut out = scaled_lasso_problem(prob, lambda0, warm, control)?;
    out.fit.lambda = lambda;
    Ok(out.fit)
}
