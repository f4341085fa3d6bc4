//! Dense tableau simplex and the Dantzig selector.
//!
//! The Dantzig program `min ||beta||_1 s.t. |X^T (y - X beta) / n| <= lambda`
//! is written with `beta = u+ - u-` as `min 1^T u s.t. [G -G; -G G] u <=
//! [lambda + c; lambda - c]`, `G = X^T X / n`, `c = X^T y / n`. Its cost is
//! nonnegative, so the slack basis is dual feasible and the dual simplex
//! method needs no phase one. Along a decreasing penalty path the previous
//! optimal basis stays dual feasible and is reused.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
/// Pivots without objective progress before switching to the smallest-index rule.
const STALL_LIMIT: usize = 50;
/// Coefficients at or below this magnitude are reported as zero.
pub const ZERO_CLIP: f64 = 1e-9;

/// `min cost^T x s.t. a x <= b, x >= 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
}

impl LinearProgram {
    fn validate(&self) -> Result<()> {
        let (k, m) = self.a.shape();
        if k == 0 || m == 0 || self.cost.len() != m || self.b.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "constraint matrix {k}x{m}, cost {}, bounds {}",
                self.cost.len(),
                self.b.len()
            )));
        }
        if self.cost.iter().chain(&self.b).chain(self.a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("linear program has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Row-major tableau over structural and slack columns. `cost` holds the
/// reduced costs; its last entry is minus the objective value.
#[derive(Debug, Clone)]
struct Tableau {
    rows: usize,
    cols: usize,
    t: Vec<f64>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
    bland: bool,
    stall: usize,
}

impl Tableau {
    /// `[a I | b]` with the slack basis.
    fn new(a: &DMatrix<f64>, b: &[f64], cost: &[f64]) -> Self {
        let (k, m) = a.shape();
        let cols = m + k;
        let w = cols + 1;
        let mut t = vec![0.0; k * w];
        for i in 0..k {
            for j in 0..m {
                t[i * w + j] = a[(i, j)];
            }
            t[i * w + m + i] = 1.0;
            t[i * w + cols] = b[i];
        }
        let mut c = vec![0.0; w];
        c[..m].copy_from_slice(cost);
        Self { rows: k, cols, t, cost: c, basis: (m..m + k).collect(), pivots: 0, bland: false, stall: 0 }
    }

    #[inline]
    fn w(&self) -> usize {
        self.cols + 1
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.w() + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.t[i * self.w() + self.cols]
    }

    fn objective(&self) -> f64 {
        -self.cost[self.cols]
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let w = self.w();
        let piv = self.t[r * w + j];
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        prow.iter_mut().for_each(|v| *v /= piv);
        prow[j] = 1.0;
        let eliminate = |row: &mut [f64]| {
            let f = row[j];
            if f != 0.0 {
                row.iter_mut().zip(prow.iter()).for_each(|(a, b)| *a -= f * b);
                row[j] = 0.0;
            }
        };
        before.chunks_mut(w).for_each(eliminate);
        after.chunks_mut(w).for_each(eliminate);
        eliminate(&mut self.cost);
        self.basis[r] = j;
        self.pivots += 1;
    }

    fn note_progress(&mut self, before: f64) {
        if (self.objective() - before).abs() > 1e-12 * (1.0 + before.abs()) {
            self.stall = 0;
            self.bland = false;
        } else {
            self.stall += 1;
            if self.stall >= STALL_LIMIT {
                self.bland = true;
            }
        }
    }

    /// Primal simplex from a primal feasible basis. Columns `>= limit` never enter.
    fn primal(&mut self, limit: usize, max_pivots: usize) -> Result<()> {
        loop {
            let enter = if self.bland {
                (0..limit).find(|&j| self.cost[j] < -PIVOT_TOL)
            } else {
                (0..limit)
                    .filter(|&j| self.cost[j] < -PIVOT_TOL)
                    .min_by(|&a, &b| self.cost[a].total_cmp(&self.cost[b]))
            };
            let Some(j) = enter else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, j);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((r, best)) => {
                            ratio < best - 1e-12 || (ratio <= best + 1e-12 && self.basis[i] < self.basis[r])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((r, _)) = leave else { return Err(Error::Unbounded) };
            if self.pivots >= max_pivots {
                return Err(Error::IterationLimit(max_pivots));
            }
            let before = self.objective();
            self.pivot(r, j);
            self.note_progress(before);
        }
    }

    /// Dual simplex from a dual feasible basis (all reduced costs >= 0).
    fn dual(&mut self, feas_tol: f64, max_pivots: usize) -> Result<()> {
        loop {
            let infeasible = (0..self.rows).filter(|&i| self.rhs(i) < -feas_tol);
            let leave = if self.bland {
                infeasible.min_by_key(|&i| self.basis[i])
            } else {
                infeasible.min_by(|&a, &b| self.rhs(a).total_cmp(&self.rhs(b)))
            };
            let Some(r) = leave else { return Ok(()) };
            let mut enter: Option<(usize, f64, f64)> = None;
            for j in 0..self.cols {
                let a = self.at(r, j);
                if a < -PIVOT_TOL {
                    let ratio = self.cost[j].max(0.0) / -a;
                    let better = match enter {
                        None => true,
                        Some((_, best, mag)) => {
                            if ratio < best - 1e-12 {
                                true
                            } else if ratio <= best + 1e-12 {
                                !self.bland && -a > mag
                            } else {
                                false
                            }
                        }
                    };
                    if better {
                        enter = Some((j, ratio, -a));
                    }
                }
            }
            let Some((j, _, _)) = enter else { return Err(Error::Infeasible) };
            if self.pivots >= max_pivots {
                return Err(Error::IterationLimit(max_pivots));
            }
            let before = self.objective();
            self.pivot(r, j);
            self.note_progress(before);
        }
    }

    /// Basic variable values, indexed by column.
    fn solution(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.cols];
        for (i, &j) in self.basis.iter().enumerate() {
            x[j] = self.rhs(i);
        }
        x
    }
}

/// Optimal basic solution of `min c^T x s.t. a x <= b, x >= 0`, with its
/// objective value.
pub fn simplex_solve(lp: &LinearProgram) -> Result<(Vec<f64>, f64)> {
    lp.validate()?;
    let (k, m) = lp.a.shape();
    let max_pivots = 50 * (k + m);
    let feas_tol = 1e-9 * lp.b.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let mut tab = Tableau::new(&lp.a, &lp.b, &lp.cost);

    if lp.b.iter().all(|v| *v >= 0.0) {
        tab.primal(m + k, max_pivots)?;
    } else if lp.cost.iter().all(|v| *v >= 0.0) {
        tab.dual(feas_tol, max_pivots)?;
    } else {
        tab = phase_one(lp, max_pivots, feas_tol)?;
        tab.primal(m + k, max_pivots)?;
    }
    let x = tab.solution()[..m].to_vec();
    let obj = lp.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok((x, obj))
}

/// Feasible basis for the original costs. Minimizes an auxiliary variable
/// `x0` subtracted from every row, entered at the most violated row.
fn phase_one(lp: &LinearProgram, max_pivots: usize, feas_tol: f64) -> Result<Tableau> {
    let (k, m) = lp.a.shape();
    let mut a = DMatrix::zeros(k, m + 1);
    a.view_mut((0, 0), (k, m)).copy_from(&lp.a);
    a.column_mut(m).fill(-1.0);
    let mut cost = vec![0.0; m + 1];
    cost[m] = 1.0;
    let mut tab = Tableau::new(&a, &lp.b, &cost);
    let r = (0..k).min_by(|&i, &j| lp.b[i].total_cmp(&lp.b[j])).unwrap_or(0);
    tab.pivot(r, m);
    tab.primal(m + 1 + k, max_pivots)?;
    if tab.objective() > feas_tol {
        return Err(Error::Infeasible);
    }
    if let Some(r) = tab.basis.iter().position(|&j| j == m) {
        let j = (0..tab.cols).filter(|&j| j != m).max_by(|&a, &b| tab.at(r, a).abs().total_cmp(&tab.at(r, b).abs()));
        match j {
            Some(j) if tab.at(r, j).abs() > PIVOT_TOL => tab.pivot(r, j),
            _ => return Err(Error::Infeasible),
        }
    }

    // Drop the x0 column and restore the real costs in reduced form.
    let old_w = tab.w();
    let cols = m + k;
    let mut t = Vec::with_capacity(k * (cols + 1));
    for i in 0..k {
        let row = &tab.t[i * old_w..(i + 1) * old_w];
        t.extend_from_slice(&row[..m]);
        t.extend_from_slice(&row[m + 1..]);
    }
    let basis: Vec<usize> = tab.basis.iter().map(|&j| if j > m { j - 1 } else { j }).collect();
    let mut out = Tableau { rows: k, cols, t, cost: vec![0.0; cols + 1], basis, pivots: tab.pivots, bland: false, stall: 0 };
    out.cost[..m].copy_from_slice(&lp.cost);
    for i in 0..k {
        let cb = if out.basis[i] < m { lp.cost[out.basis[i]] } else { 0.0 };
        if cb != 0.0 {
            let w = cols + 1;
            for j in 0..w {
                out.cost[j] -= cb * out.t[i * w + j];
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DantzigSolution {
    pub beta: Vec<f64>,
    pub support: Vec<usize>,
    pub lambda: f64,
    /// `sum |beta_j|` of the returned (clipped) vector.
    pub objective: f64,
    /// `max(||G beta - c||_inf - lambda, 0)`.
    pub feasibility_residual: f64,
}

/// Warm-startable Dantzig selector over a fixed design.
#[derive(Debug, Clone)]
pub struct DantzigSolver {
    p: usize,
    gram: DMatrix<f64>,
    xty: Vec<f64>,
    tableau: Tableau,
    /// `[G -G; -G G]` plus slack identity, for re-solving the basic values.
    full: DMatrix<f64>,
}

impl DantzigSolver {
    pub fn new(x: &DMatrix<f64>, y: &[f64]) -> Result<Self> {
        let n = x.nrows();
        if n != y.len() {
            return Err(Error::DimensionMismatch(format!("X has {n} rows, y has {}", y.len())));
        }
        let gram = x.tr_mul(x) / n as f64;
        let xty = (x.tr_mul(&DVector::from_column_slice(y)) / n as f64).as_slice().to_vec();
        Ok(Self::from_gram(gram, xty))
    }

    pub fn from_gram(gram: DMatrix<f64>, xty: Vec<f64>) -> Self {
        let p = xty.len();
        let k = 2 * p;
        let mut a = DMatrix::zeros(k, k);
        for i in 0..p {
            for j in 0..p {
                let g = gram[(i, j)];
                a[(i, j)] = g;
                a[(i, j + p)] = -g;
                a[(i + p, j)] = -g;
                a[(i + p, j + p)] = g;
            }
        }
        let mut full = DMatrix::zeros(k, 2 * k);
        full.view_mut((0, 0), (k, k)).copy_from(&a);
        full.view_mut((0, k), (k, k)).fill_with_identity();
        let b = vec![0.0; k];
        let tableau = Tableau::new(&a, &b, &vec![1.0; k]);
        Self { p, gram, xty, tableau, full }
    }

    pub fn lambda_max(&self) -> f64 {
        self.xty.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    fn rhs(&self, lambda: f64) -> Vec<f64> {
        let p = self.p;
        (0..2 * p).map(|i| if i < p { lambda + self.xty[i] } else { lambda - self.xty[i - p] }).collect()
    }

    /// Basic values `B^{-1} b` from the slack block of the tableau.
    fn load_rhs(&mut self, b: &[f64]) {
        let k = 2 * self.p;
        let tab = &mut self.tableau;
        let w = tab.w();
        for i in 0..k {
            let row = &tab.t[i * w + k..i * w + 2 * k];
            let v: f64 = row.iter().zip(b).map(|(a, c)| a * c).sum();
            tab.t[i * w + 2 * k] = v;
        }
        let obj: f64 = (0..k).filter(|&i| tab.basis[i] < k).map(|i| tab.t[i * w + 2 * k]).sum();
        tab.cost[2 * k] = -obj;
    }

    /// Rebuilds the tableau from the current basis to shed rounding drift.
    fn reinvert(&mut self, b: &[f64]) -> Result<()> {
        let k = 2 * self.p;
        let basis = self.tableau.basis.clone();
        let bmat = DMatrix::from_fn(k, k, |i, r| self.full[(i, basis[r])]);
        let lu = bmat.lu();
        let binv = lu.try_inverse().ok_or(Error::SingularSystem)?;
        let body = &binv * &self.full;
        let tab = &mut self.tableau;
        let w = tab.w();
        for i in 0..k {
            for j in 0..2 * k {
                tab.t[i * w + j] = body[(i, j)];
            }
        }
        for (r, &j) in basis.iter().enumerate() {
            for i in 0..k {
                tab.t[i * w + j] = if i == r { 1.0 } else { 0.0 };
            }
        }
        // Reduced costs: d_j = c_j - c_B^T B^{-1} a_j with c = 1 on structural columns.
        for j in 0..2 * k {
            let cj = if j < k { 1.0 } else { 0.0 };
            let mut d = cj;
            for (r, &bj) in basis.iter().enumerate() {
                if bj < k {
                    d -= tab.t[r * w + j];
                }
            }
            tab.cost[j] = d;
        }
        for &j in &basis {
            tab.cost[j] = 0.0;
        }
        self.load_rhs(b);
        Ok(())
    }

    /// Solves at `lambda`, starting from the previous optimal basis.
    pub fn solve(&mut self, lambda: f64) -> Result<DantzigSolution> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let k = 2 * self.p;
        let b = self.rhs(lambda);
        let feas_tol = 1e-11 * b.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        let max_pivots = 50 * (k + k);
        self.tableau.pivots = 0;
        self.load_rhs(&b);
        let mut outcome = self.tableau.dual(feas_tol, max_pivots);
        if outcome.is_err() {
            self.reinvert(&b)?;
            self.tableau.pivots = 0;
            outcome = self.tableau.dual(feas_tol, max_pivots);
        }
        outcome?;
        let mut sol = self.polish(lambda, &b)?;
        if sol.feasibility_residual > 1e-9 {
            self.reinvert(&b)?;
            self.tableau.pivots = 0;
            self.tableau.dual(feas_tol, max_pivots)?;
            sol = self.polish(lambda, &b)?;
        }
        Ok(sol)
    }

    /// Basic values from an LU solve on the original columns.
    fn polish(&self, lambda: f64, b: &[f64]) -> Result<DantzigSolution> {
        let k = 2 * self.p;
        let p = self.p;
        let basis = &self.tableau.basis;
        let bmat = DMatrix::from_fn(k, k, |i, r| self.full[(i, basis[r])]);
        let xb = bmat.lu().solve(&DVector::from_column_slice(b)).ok_or(Error::SingularSystem)?;
        let mut u = vec![0.0; k];
        for (r, &j) in basis.iter().enumerate() {
            if j < k {
                u[j] = xb[r].max(0.0);
            }
        }
        let beta: Vec<f64> = (0..p)
            .map(|j| {
                let v = u[j] - u[j + p];
                if v.abs() <= ZERO_CLIP {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        Ok(self.package(beta, lambda))
    }

    fn package(&self, beta: Vec<f64>, lambda: f64) -> DantzigSolution {
        let gb = &self.gram * DVector::from_column_slice(&beta);
        let worst = (0..self.p).map(|i| (gb[i] - self.xty[i]).abs()).fold(0.0_f64, f64::max);
        DantzigSolution {
            support: beta.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, _)| j).collect(),
            objective: beta.iter().map(|v| v.abs()).sum(),
            feasibility_residual: (worst - lambda).max(0.0),
            beta,
            lambda,
        }
    }
}

pub fn dantzig_select(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<DantzigSolution> {
    DantzigSolver::new(x, y)?.solve(lambda)
}

/// Solutions along `lambdas`, warm-started; a decreasing order keeps each
/// re-solve short.
pub fn dantzig_path(x: &DMatrix<f64>, y: &[f64], lambdas: &[f64]) -> Result<Vec<DantzigSolution>> {
    let mut solver = DantzigSolver::new(x, y)?;
    lambdas.iter().map(|&l| solver.solve(l)).collect()
}
