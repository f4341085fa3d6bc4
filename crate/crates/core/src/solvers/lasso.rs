use nalgebra::DMatrix;

use super::{coordinate_descent, soft_threshold, CdProblem, FitResult, PenaltyKind, PenaltySpec, SolverControl};
use crate::error::{Error, Result};
use crate::numerics::dot;

fn penalty_weights(spec: &PenaltySpec) -> Result<Option<&[f64]>> {
    match &spec.kind {
        PenaltyKind::Lasso => Ok(None),
        PenaltyKind::WeightedLasso(w) => Ok(Some(w)),
        other => Err(Error::InvalidParameter(format!("lasso_cd does not handle {other:?}"))),
    }
}

pub fn lasso_cd(x: &DMatrix<f64>, y: &[f64], penalty: &PenaltySpec, control: &SolverControl) -> Result<FitResult> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!("X has {} rows, y has {}", x.nrows(), y.len())));
    }
    penalty.validate(x.ncols())?;
    control.validate()?;
    let weights = penalty_weights(penalty)?;
    let prob = CdProblem::new(x, y);
    Ok(lasso_cd_problem(&prob, weights, penalty.lambda, None, control))
}

/// Weighted lasso on prepared data, optionally warm-started.
pub fn lasso_cd_problem(
    prob: &CdProblem,
    weights: Option<&[f64]>,
    lambda: f64,
    warm: Option<&[f64]>,
    control: &SolverControl,
) -> FitResult {
    run_lasso(prob, weights, lambda, warm, control, None)
}

/// Same as [`lasso_cd_problem`] from a zero start, also returning the
/// penalized objective after every sweep.
pub fn lasso_traced(prob: &CdProblem, weights: Option<&[f64]>, lambda: f64, control: &SolverControl) -> (FitResult, Vec<f64>) {
    let mut trace = Vec::new();
    let mut hook = |b: &[f64]| trace.push(lasso_objective(prob, weights, lambda, b));
    let fit = run_lasso(prob, weights, lambda, None, control, Some(&mut hook));
    (fit, trace)
}

fn lasso_objective(prob: &CdProblem, weights: Option<&[f64]>, lambda: f64, beta: &[f64]) -> f64 {
    let pen: f64 = match weights {
        Some(w) => beta.iter().zip(w).map(|(b, w)| w * b.abs()).sum(),
        None => beta.iter().map(|b| b.abs()).sum(),
    };
    prob.half_mse(beta) + lambda * pen
}

fn run_lasso(
    prob: &CdProblem,
    weights: Option<&[f64]>,
    lambda: f64,
    warm: Option<&[f64]>,
    control: &SolverControl,
    on_sweep: Option<&mut dyn FnMut(&[f64])>,
) -> FitResult {
    let p = prob.p();
    if prob.yty() == 0.0 {
        return FitResult::zero(p, lambda);
    }
    let mut beta = warm.map(|w| w.to_vec()).unwrap_or_else(|| vec![0.0; p]);
    let update = |j: usize, z: f64, v: f64| {
        let w = weights.map_or(1.0, |w| w[j]);
        soft_threshold(z, lambda * w) / v
    };
    let (iterations, converged) = coordinate_descent(prob, &mut beta, control, update, on_sweep);
    FitResult::new(beta, lambda, iterations, converged)
}

/// Warm-started solutions along `lambdas` (expected decreasing).
pub fn lasso_path(prob: &CdProblem, weights: Option<&[f64]>, lambdas: &[f64], control: &SolverControl) -> Vec<FitResult> {
    let mut out: Vec<FitResult> = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        let warm = out.last().map(|f| f.beta.as_slice());
        out.push(lasso_cd_problem(prob, weights, lam, warm, control));
    }
    out
}

/// Coordinate-wise closed form for orthogonal designs. `lambda` is on the
/// internal scale; the thresholding is written with `lambda' = 2 n lambda`,
/// `sigma_j^2 = x_j^T x_j / n` and `x~_j = x_j / sigma_j`.
pub fn orthogonal_closed_form(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::DimensionMismatch(format!("X has {n} rows, y has {}", y.len())));
    }
    let gram = x.tr_mul(x);
    for r in 0..p {
        for c in 0..r {
            let scale = (gram[(r, r)] * gram[(c, c)]).sqrt();
            if gram[(r, c)].abs() > 1e-8 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::NotOrthogonal { row: r, col: c, value: gram[(r, c)] });
            }
        }
    }
    let nf = n as f64;
    let lambda_scaled = 2.0 * nf * lambda;
    Ok((0..p)
        .map(|j| {
            let col = &x.as_slice()[j * n..(j + 1) * n];
            let sigma = (gram[(j, j)] / nf).sqrt();
            if sigma == 0.0 {
                return 0.0;
            }
            let t = dot(col, y) / sigma;
            if t == 0.0 {
                return 0.0;
            }
            let shrink = (1.0 - lambda_scaled / (2.0 * sigma * t.abs())).max(0.0);
            t / (nf * sigma) * shrink
        })
        .collect())
}

/// Relaxed lasso: stage-1 support from `lasso_cd(lambda)`, then lasso with
/// penalty `phi * lambda` restricted to that support.
pub fn relaxed_lasso(x: &DMatrix<f64>, y: &[f64], lambda: f64, phi: f64, control: &SolverControl) -> Result<FitResult> {
    let stage1 = lasso_cd(x, y, &PenaltySpec::lasso(lambda), control)?;
    let prob = CdProblem::new(x, y);
    relaxed_from_stage1(&prob, &stage1, phi, control)
}

/// An empty stage-1 support yields the zero fit.
pub fn relaxed_from_stage1(prob: &CdProblem, stage1: &FitResult, phi: f64, control: &SolverControl) -> Result<FitResult> {
    if !(phi > 0.0 && phi <= 1.0) {
        return Err(Error::InvalidParameter(format!("phi must lie in (0, 1], got {phi}")));
    }
    let p = prob.p();
    let lambda = stage1.lambda;
    if stage1.support.is_empty() {
        return Ok(FitResult::zero(p, lambda));
    }
    if phi == 1.0 {
        return Ok(stage1.clone());
    }
    let sub = prob.restrict(&stage1.support);
    let warm: Vec<f64> = stage1.support.iter().map(|&j| stage1.beta[j]).collect();
    let inner = lasso_cd_problem(&sub, None, phi * lambda, Some(&warm), control);
    let mut beta = vec![0.0; p];
    for (k, &j) in stage1.support.iter().enumerate() {
        beta[j] = inner.beta[k];
    }
    Ok(FitResult::new(beta, lambda, stage1.iterations + inner.iterations, stage1.converged && inner.converged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{build_covariance, mvn_sample, ols_solve, CovarianceBase, CovarianceSpec, RngStream};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn centered(mut x: DMatrix<f64>) -> DMatrix<f64> {
        for mut c in x.column_iter_mut() {
            let m = c.mean();
            c.add_scalar_mut(-m);
        }
        x
    }

    fn random_problem(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = RngStream::new(seed, 0).rng();
        let x = centered(DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal)));
        let mut y: Vec<f64> = (0..n)
            .map(|i| x[(i, 0)] - 0.5 * x[(i, p - 1)] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let m = y.iter().sum::<f64>() / n as f64;
        y.iter_mut().for_each(|v| *v -= m);
        (x, y)
    }

    fn kkt_violation(x: &DMatrix<f64>, y: &[f64], fit: &FitResult, weights: Option<&[f64]>) -> f64 {
        let prob = CdProblem::design(x, y);
        let g = prob.gradient(&fit.beta);
        g.iter()
            .enumerate()
            .map(|(j, gj)| {
                let t = fit.lambda * weights.map_or(1.0, |w| w[j]);
                if fit.beta[j] != 0.0 {
                    (gj - t * fit.beta[j].signum()).abs()
                } else {
                    (gj.abs() - t).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    fn orthonormal_design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = RngStream::new(seed, 7).rng();
        // Columns orthogonal to the constant vector, then orthonormalized and scaled to norm sqrt(n).
        let mut a = DMatrix::from_fn(n, p + 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        a.column_mut(0).fill(1.0);
        let q = a.qr().q();
        DMatrix::from_fn(n, p, |i, j| q[(i, j + 1)] * (n as f64).sqrt())
    }

    #[test]
    fn zero_penalty_gives_ols() {
        let (x, y) = random_problem(60, 8, 1);
        let fit = lasso_cd(&x, &y, &PenaltySpec::lasso(0.0), &SolverControl { tol: 1e-12, ..Default::default() }).unwrap();
        let ols = ols_solve(&x, &y).unwrap();
        assert!(fit.converged);
        for (a, b) in fit.beta.iter().zip(&ols) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn orthonormal_design_is_soft_thresholding() {
        let n = 40;
        let x = orthonormal_design(n, 5, 3);
        let (_, y) = random_problem(n, 5, 4);
        let lam = 0.3;
        let fit = lasso_cd(&x, &y, &PenaltySpec::lasso(lam), &SolverControl::default()).unwrap();
        for j in 0..5 {
            let z = dot(x.column(j).as_slice(), &y) / n as f64;
            assert!((fit.beta[j] - soft_threshold(z, lam)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_above_lambda_max() {
        let (x, y) = random_problem(30, 6, 2);
        let prob = CdProblem::new(&x, &y);
        let lmax = prob.lambda_max(None);
        let fit = lasso_cd(&x, &y, &PenaltySpec::lasso(lmax), &SolverControl::default()).unwrap();
        assert!(fit.support.is_empty());
        let fit = lasso_cd(&x, &y, &PenaltySpec::lasso(0.99 * lmax), &SolverControl::default()).unwrap();
        assert_eq!(fit.support.len(), 1);
    }

    #[test]
    fn matches_grid_search_oracle() {
        let sigma = build_covariance(&CovarianceSpec { base: CovarianceBase::Toeplitz(0.5), scale_diag: vec![1.0, 1.0] }).unwrap();
        let stream = RngStream::new(11, 0);
        let x = centered(mvn_sample(20, &sigma, &stream).unwrap());
        let mut rng = stream.child(1).rng();
        let mut y: Vec<f64> = (0..20).map(|i| 1.5 * x[(i, 0)] + rng.sample::<f64, _>(StandardNormal)).collect();
        let m = y.iter().sum::<f64>() / 20.0;
        y.iter_mut().for_each(|v| *v -= m);
        let lam = 0.2;
        let prob = CdProblem::new(&x, &y);
        let fit = lasso_cd(&x, &y, &PenaltySpec::lasso(lam), &SolverControl::default()).unwrap();
        let obj = |b: &[f64]| {
            let r: f64 = (0..20).map(|i| (y[i] - x[(i, 0)] * b[0] - x[(i, 1)] * b[1]).powi(2)).sum();
            r / 40.0 + lam * (b[0].abs() + b[1].abs())
        };
        let mut best = f64::INFINITY;
        let steps = 6000;
        for a in 0..=steps {
            let b0 = -3.0 + a as f64 * 1e-3;
            for c in 0..=steps {
                let b1 = -3.0 + c as f64 * 1e-3;
                best = best.min(obj(&[b0, b1]));
            }
        }
        let mine = obj(&fit.beta);
        assert!((mine - prob.half_mse(&fit.beta) - lam * (fit.beta[0].abs() + fit.beta[1].abs())).abs() < 1e-12);
        // The grid minimum can only be above the true minimum, by at most the
        // objective change over half a grid cell.
        assert!(mine <= best + 1e-12, "{mine} > {best}");
        assert!(best - mine < 1e-5, "{best} vs {mine}");
    }

    #[test]
    fn kkt_certificate_random_instances() {
        for seed in 0..100u64 {
            let p = if seed % 2 == 0 { 10 } else { 100 };
            let (x, y) = random_problem(50, p, 100 + seed);
            let prob = CdProblem::new(&x, &y);
            let lam = prob.lambda_max(None) * (0.05 + 0.9 * ((seed * 37 % 100) as f64 / 100.0));
            let fit = lasso_cd(&x, &y, &PenaltySpec::lasso(lam), &SolverControl::default()).unwrap();
            assert!(fit.converged);
            assert!(kkt_violation(&x, &y, &fit, None) <= 1e-7, "seed {seed}");
        }
    }

    #[test]
    fn wide_backend_satisfies_kkt() {
        let (x, y) = random_problem(40, 1200, 5);
        let prob = CdProblem::new(&x, &y);
        let lam = 0.2 * prob.lambda_max(None);
        let fit = lasso_cd(&x, &y, &PenaltySpec::lasso(lam), &SolverControl::default()).unwrap();
        assert!(fit.converged);
        assert!(kkt_violation(&x, &y, &fit, None) <= 1e-7);
    }

    #[test]
    fn weighted_kkt_and_infinite_like_weights() {
        let (x, y) = random_problem(50, 10, 9);
        let mut w: Vec<f64> = (0..10).map(|j| 0.5 + j as f64 * 0.2).collect();
        w[0] = 1e12;
        let lam = 0.05;
        let fit = lasso_cd(&x, &y, &PenaltySpec::weighted(w.clone(), lam), &SolverControl::default()).unwrap();
        assert_eq!(fit.beta[0], 0.0);
        assert!(kkt_violation(&x, &y, &fit, Some(&w)) <= 1e-7);
    }

    #[test]
    fn sweeps_never_increase_objective() {
        let (x, y) = random_problem(50, 30, 12);
        let prob = CdProblem::new(&x, &y);
        let (fit, trace) = lasso_traced(&prob, None, 0.02, &SolverControl::default());
        assert!(fit.converged);
        assert!(trace.len() > 1);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn zero_response_returns_zero_fit() {
        let (x, _) = random_problem(20, 4, 1);
        let fit = lasso_cd(&x, &[0.0; 20], &PenaltySpec::lasso(0.1), &SolverControl::default()).unwrap();
        assert!(fit.converged && fit.support.is_empty());
    }

    #[test]
    fn path_is_warm_started_and_matches_cold_fits() {
        let (x, y) = random_problem(50, 20, 21);
        let prob = CdProblem::new(&x, &y);
        let lmax = prob.lambda_max(None);
        let grid: Vec<f64> = (0..10).map(|k| lmax * 0.7f64.powi(k)).collect();
        let path = lasso_path(&prob, None, &grid, &SolverControl::default());
        for (fit, &lam) in path.iter().zip(&grid) {
            let cold = lasso_cd(&x, &y, &PenaltySpec::lasso(lam), &SolverControl::default()).unwrap();
            for (a, b) in fit.beta.iter().zip(&cold.beta) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn closed_form_examples() {
        let n = 50;
        let x = orthonormal_design(n, 4, 5) * 2.0;
        let (_, y) = random_problem(n, 4, 6);
        let b0 = orthogonal_closed_form(&x, &y, 0.0).unwrap();
        for j in 0..4 {
            let c = x.column(j);
            assert!((b0[j] - dot(c.as_slice(), &y) / c.norm_squared()).abs() < 1e-12);
        }
        // A coordinate below its threshold is zeroed.
        let j = 2;
        let c = x.column(j);
        let sigma = (c.norm_squared() / n as f64).sqrt();
        let t = (dot(c.as_slice(), &y) / sigma).abs();
        // Zero iff t <= lambda' / (2 sigma) with lambda' = 2 n lambda.
        let at = t * sigma / n as f64;
        assert_eq!(orthogonal_closed_form(&x, &y, at * 1.0001).unwrap()[j], 0.0);
        assert_ne!(orthogonal_closed_form(&x, &y, at * 0.9999).unwrap()[j], 0.0);
    }

    #[test]
    fn closed_form_rejects_non_orthogonal() {
        let (x, y) = random_problem(30, 3, 2);
        assert!(matches!(orthogonal_closed_form(&x, &y, 0.1), Err(Error::NotOrthogonal { .. })));
    }

    #[test]
    fn relaxed_phi_one_is_lasso() {
        let (x, y) = random_problem(50, 10, 31);
        let c = SolverControl::default();
        let a = relaxed_lasso(&x, &y, 0.1, 1.0, &c).unwrap();
        let b = lasso_cd(&x, &y, &PenaltySpec::lasso(0.1), &c).unwrap();
        assert_eq!(a.beta, b.beta);
    }

    #[test]
    fn relaxed_small_phi_is_restricted_ols() {
        let (x, y) = random_problem(50, 10, 32);
        let c = SolverControl { tol: 1e-12, ..Default::default() };
        let fit = relaxed_lasso(&x, &y, 0.1, 1e-8, &c).unwrap();
        let s = fit.support.clone();
        assert!(!s.is_empty());
        let xs = DMatrix::from_fn(50, s.len(), |i, k| x[(i, s[k])]);
        let ols = ols_solve(&xs, &y).unwrap();
        for (k, &j) in s.iter().enumerate() {
            assert!((fit.beta[j] - ols[k]).abs() < 1e-5);
        }
        let stage1 = lasso_cd(&x, &y, &PenaltySpec::lasso(0.1), &c).unwrap();
        for j in 0..10 {
            if stage1.beta[j] == 0.0 {
                assert_eq!(fit.beta[j], 0.0);
            }
        }
    }

    #[test]
    fn relaxed_empty_support_is_zero_fit() {
        let (x, y) = random_problem(30, 5, 33);
        let lmax = CdProblem::new(&x, &y).lambda_max(None);
        let fit = relaxed_lasso(&x, &y, 2.0 * lmax, 0.5, &SolverControl::default()).unwrap();
        assert!(fit.support.is_empty());
        assert!(relaxed_lasso(&x, &y, 0.1, 0.0, &SolverControl::default()).is_err());
    }
}
