use nalgebra::DMatrix;

use super::{coordinate_descent, CdProblem, FitResult, SolverControl};
use crate::error::{Error, Result};

pub const SCAD_A: f64 = 3.7;

/// SCAD penalty value at `|b|`.
pub fn scad_penalty(b: f64, lambda: f64, a: f64) -> f64 {
    let t = b.abs();
    if t <= lambda {
        lambda * t
    } else if t <= a * lambda {
        (2.0 * a * lambda * t - t * t - lambda * lambda) / (2.0 * (a - 1.0))
    } else {
        lambda * lambda * (a + 1.0) / 2.0
    }
}

/// Minimizer of `(v/2) b^2 - z b + scad(b)`. With `v = 1` this is soft
/// thresholding for `|z| <= 2 lambda`, the linear interpolation rule up to
/// `a lambda`, and the identity beyond.
pub fn scad_univariate(z: f64, v: f64, lambda: f64, a: f64) -> f64 {
    let t = z.abs();
    let h = |b: f64| 0.5 * v * b * b - t * b + scad_penalty(b, lambda, a);
    let mut cands = [0.0_f64; 5];
    cands[1] = ((t - lambda) / v).clamp(0.0, lambda);
    let k = v - 1.0 / (a - 1.0);
    if k > 0.0 {
        cands[2] = ((t - a * lambda / (a - 1.0)) / k).clamp(lambda, a * lambda);
    } else {
        cands[2] = lambda;
    }
    cands[3] = a * lambda;
    cands[4] = (t / v).max(a * lambda);
    let mut best = 0.0;
    let mut best_val = h(0.0);
    for &c in &cands[1..] {
        let val = h(c);
        if val < best_val {
            best = c;
            best_val = val;
        }
    }
    best.copysign(z)
}

pub fn scad_objective(prob: &CdProblem, beta: &[f64], lambda: f64, a: f64) -> f64 {
    prob.half_mse(beta) + beta.iter().map(|b| scad_penalty(*b, lambda, a)).sum::<f64>()
}

fn check(lambda: f64, a: f64) -> Result<()> {
    if !(a > 2.0) {
        return Err(Error::InvalidParameter(format!("SCAD requires a > 2, got {a}")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

pub fn scad_fit(x: &DMatrix<f64>, y: &[f64], lambda: f64, a: f64, control: &SolverControl) -> Result<FitResult> {
    check(lambda, a)?;
    control.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!("X has {} rows, y has {}", x.nrows(), y.len())));
    }
    let prob = CdProblem::new(x, y);
    Ok(scad_problem(&prob, lambda, a, None, control))
}

fn scad_problem(prob: &CdProblem, lambda: f64, a: f64, warm: Option<&[f64]>, control: &SolverControl) -> FitResult {
    let p = prob.p();
    if prob.yty() == 0.0 {
        return FitResult::zero(p, lambda);
    }
    let mut beta = warm.map(|w| w.to_vec()).unwrap_or_else(|| vec![0.0; p]);
    let update = |_: usize, z: f64, v: f64| scad_univariate(z, v, lambda, a);
    let (iterations, converged) = coordinate_descent(prob, &mut beta, control, update, None);
    FitResult::new(beta, lambda, iterations, converged)
}

/// Warm-started SCAD solutions along `lambdas` (expected decreasing).
pub fn scad_path(prob: &CdProblem, lambdas: &[f64], a: f64, control: &SolverControl) -> Vec<FitResult> {
    let mut out: Vec<FitResult> = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        let warm = out.last().map(|f| f.beta.as_slice());
        out.push(scad_problem(prob, lam, a, warm, control));
    }
    out
}
