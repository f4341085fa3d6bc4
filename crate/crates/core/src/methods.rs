//! Selector roster: tuning of every method followed by the OLS refit on the
//! original covariate scale.

use std::cell::OnceCell;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::DantzigSolver;
use crate::numerics::RngStream;
use crate::screening::{dcvs_select, DEFAULT_ALPHA, DEFAULT_PERMUTATIONS};
use crate::selection::{
    bic_select, default_eps_ratio, kfold_cv, lambda_grid, log_grid, make_folds, BicSummary, CvSummary, FoldData,
    DEFAULT_FOLDS, DEFAULT_N_LAMBDA,
};
use crate::solvers::{
    adaptive_weights, lasso_path, ols_refit, relaxed_from_stage1, scad_path, scaled_lasso_problem, universal_lambda0,
    CdProblem, FitResult, RefitResult, RidgeSolver, SolverControl, SCAD_A,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Lasso,
    AdapL,
    Scad,
    Dantzig,
    RelaxL,
    SqrtL,
    ScalL,
    DcVs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    Min,
    OneSe,
    Bic,
    Fixed,
}

impl Rule {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min" => Some(Self::Min),
            "1se" => Some(Self::OneSe),
            "bic" => Some(Self::Bic),
            "fixed" => Some(Self::Fixed),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Min => "min",
            Self::OneSe => "1se",
            Self::Bic => "bic",
            Self::Fixed => "fixed",
        }
    }
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lasso" => Some(Self::Lasso),
            "adapl" => Some(Self::AdapL),
            "scad" => Some(Self::Scad),
            "dant" | "dantzig" => Some(Self::Dantzig),
            "relaxl" => Some(Self::RelaxL),
            "sqrtl" => Some(Self::SqrtL),
            "scall" => Some(Self::ScalL),
            "dc.vs" | "dcvs" => Some(Self::DcVs),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Lasso => "lasso",
            Self::AdapL => "adapl",
            Self::Scad => "scad",
            Self::Dantzig => "dant",
            Self::RelaxL => "relaxl",
            Self::SqrtL => "sqrtl",
            Self::ScalL => "scall",
            Self::DcVs => "dc.vs",
        }
    }

    pub fn default_rule(self) -> Rule {
        match self {
            Self::ScalL | Self::DcVs => Rule::Fixed,
            _ => Rule::Min,
        }
    }

    pub fn supports(self, rule: Rule) -> bool {
        match self {
            Self::Lasso | Self::AdapL | Self::Scad => matches!(rule, Rule::Min | Rule::OneSe | Rule::Bic),
            Self::Dantzig | Self::RelaxL | Self::SqrtL => matches!(rule, Rule::Min | Rule::OneSe),
            Self::ScalL | Self::DcVs => rule == Rule::Fixed,
        }
    }
}

/// A method with its tuning rule, e.g. `lasso.1se`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MethodId {
    pub method: Method,
    pub rule: Rule,
}

impl MethodId {
    pub fn new(method: Method, rule: Rule) -> Result<Self> {
        if !method.supports(rule) {
            return Err(Error::Unsupported(format!("rule '{}' is not available for method '{}'", rule.label(), method.label())));
        }
        Ok(Self { method, rule })
    }

    /// Accepts `lasso.min`, `adapl.1se`, `scad`, `scad.bic`, `dant`, `dc.vs`, ...
    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(m) = Method::parse(&lower) {
            return Self::new(m, m.default_rule());
        }
        if let Some((head, tail)) = lower.rsplit_once('.') {
            if let (Some(m), Some(r)) = (Method::parse(head), Rule::parse(tail)) {
                return Self::new(m, r);
            }
        }
        Err(Error::InvalidParameter(format!(
            "unknown method '{s}' (valid: lasso.min, lasso.1se, lasso.bic, adapl.min, adapl.1se, scad, dant, relaxl, sqrtl, scall, dc.vs)"
        )))
    }

    pub fn all_standard() -> Vec<MethodId> {
        ["lasso.min", "lasso.1se", "lasso.bic", "adapl.min", "adapl.1se", "scad", "dant", "relaxl", "sqrtl", "scall", "dc.vs"]
            .iter()
            .map(|s| Self::parse(s).expect("built-in id"))
            .collect()
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.rule == self.method.default_rule() && !matches!(self.method, Method::Lasso | Method::AdapL) {
            write!(f, "{}", self.method.label())
        } else {
            write!(f, "{}.{}", self.method.label(), self.rule.label())
        }
    }
}

/// Tuning constants shared by all methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub folds: usize,
    pub n_lambda: usize,
    /// `None` uses 1e-4 when n > p and 1e-2 otherwise.
    pub eps_ratio: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub scad_a: f64,
    pub adaptive_q: f64,
    /// Ridge grid top as a multiple of the L1 `lambda_max`.
    pub ridge_max_factor: f64,
    /// Relaxation factors, from no relaxation downwards.
    pub relax_phis: Vec<f64>,
    /// `None` uses `sqrt(2 ln p / n)`.
    pub scall_lambda0: Option<f64>,
    pub dcvs_alpha: f64,
    pub dcvs_permutations: usize,
    /// Larger designs make the dense Dantzig tableau impractical.
    pub dantzig_max_p: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            n_lambda: DEFAULT_N_LAMBDA,
            eps_ratio: None,
            tol: 1e-7,
            max_iter: 100_000,
            scad_a: SCAD_A,
            adaptive_q: 1.0,
            ridge_max_factor: 1000.0,
            relax_phis: vec![1.0, 0.75, 0.5, 0.25],
            scall_lambda0: None,
            dcvs_alpha: DEFAULT_ALPHA,
            dcvs_permutations: DEFAULT_PERMUTATIONS,
            dantzig_max_p: 400,
        }
    }
}

impl TuneConfig {
    pub fn control(&self) -> SolverControl {
        SolverControl { tol: self.tol, max_iter: self.max_iter, active_set_cycling: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 || self.n_lambda == 0 || self.relax_phis.is_empty() {
            return Err(Error::InvalidParameter("folds >= 2, n_lambda >= 1 and a nonempty phi list are required".into()));
        }
        if self.relax_phis.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::InvalidParameter("relaxation factors must lie in (0, 1]".into()));
        }
        self.control().validate()
    }
}

/// Tuning trace of one selection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub grid: Vec<f64>,
    pub chosen_index: Option<usize>,
    pub cv: Option<CvSummary>,
    pub bic: Option<BicSummary>,
    pub phi: Option<f64>,
    pub sigma: Option<f64>,
    pub ridge_lambda: Option<f64>,
    pub dcvs_p_values: Option<Vec<f64>>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub id: MethodId,
    /// Coefficients on the selection design; `refit_beta` holds the refit.
    pub fit: FitResult,
    pub refit: RefitResult,
    pub diagnostics: Diagnostics,
}

/// Full-data path plus lazily computed CV and BIC summaries.
struct PathTuning {
    grid: Vec<f64>,
    path: Vec<Option<Vec<f64>>>,
    cv: OnceCell<CvSummary>,
    bic: OnceCell<BicSummary>,
    ridge_lambda: Option<f64>,
    weights: Option<Vec<f64>>,
}

const FOLD_TAG: u64 = 0xF01D;
const DCVS_TAG: u64 = 0xDC75;

/// Runs selectors on one dataset, sharing paths and CV across rules.
pub struct Tuner<'a> {
    x: &'a DMatrix<f64>,
    x_raw: &'a DMatrix<f64>,
    y: &'a [f64],
    cfg: &'a TuneConfig,
    stream: RngStream,
    folds: OnceCell<Vec<usize>>,
    prob: OnceCell<CdProblem>,
    families: [OnceCell<PathTuning>; 6],
}

fn family_slot(m: Method) -> Option<usize> {
    match m {
        Method::Lasso => Some(0),
        Method::AdapL => Some(1),
        Method::Scad => Some(2),
        Method::Dantzig => Some(3),
        Method::RelaxL => Some(4),
        Method::SqrtL => Some(5),
        _ => None,
    }
}

impl<'a> Tuner<'a> {
    /// `x` is the centered design used for selection (raw or standardized),
    /// `x_raw` the centered original-scale design used for the refit, `y`
    /// the centered response.
    pub fn new(x: &'a DMatrix<f64>, x_raw: &'a DMatrix<f64>, y: &'a [f64], cfg: &'a TuneConfig, stream: RngStream) -> Result<Self> {
        if x.shape() != x_raw.shape() || x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "selection design {:?}, raw design {:?}, response {}",
                x.shape(),
                x_raw.shape(),
                y.len()
            )));
        }
        cfg.validate()?;
        Ok(Self {
            x,
            x_raw,
            y,
            cfg,
            stream,
            folds: OnceCell::new(),
            prob: OnceCell::new(),
            families: Default::default(),
        })
    }

    fn n(&self) -> usize {
        self.x.nrows()
    }

    fn p(&self) -> usize {
        self.x.ncols()
    }

    fn eps(&self) -> f64 {
        self.cfg.eps_ratio.unwrap_or_else(|| default_eps_ratio(self.n(), self.p()))
    }

    fn folds(&self) -> Result<&Vec<usize>> {
        if self.folds.get().is_none() {
            let f = make_folds(self.n(), self.cfg.folds, &self.stream.child(FOLD_TAG))?;
            let _ = self.folds.set(f);
        }
        Ok(self.folds.get().expect("set above"))
    }

    fn problem(&self) -> &CdProblem {
        self.prob.get_or_init(|| CdProblem::new(self.x, self.y))
    }

    pub fn run(&self, id: MethodId) -> Result<TuneOutcome> {
        if !id.method.supports(id.rule) {
            return Err(Error::Unsupported(format!("rule '{}' is not available for method '{}'", id.rule.label(), id.method.label())));
        }
        let mut diag = Diagnostics::default();
        let (beta, lambda) = match id.method {
            Method::ScalL => {
                let l0 = self.cfg.scall_lambda0.unwrap_or_else(|| universal_lambda0(self.n(), self.p()));
                let out = scaled_lasso_problem(self.problem(), l0, None, &self.cfg.control())?;
                diag.sigma = Some(out.sigma);
                diag.grid = vec![l0];
                diag.notes.push(format!("lambda0 = {l0}"));
                (out.fit.beta, out.fit.lambda)
            }
            Method::DcVs => {
                let r = dcvs_select(self.x, self.y, self.cfg.dcvs_alpha, self.cfg.dcvs_permutations, &self.stream.child(DCVS_TAG))?;
                if r.singular_refit {
                    diag.notes.push("selection stopped at a collinear refit".into());
                }
                diag.dcvs_p_values = Some(r.p_values.clone());
                let ranking: Vec<f64> = (0..self.p())
                    .map(|j| r.support.iter().position(|&s| s == j).map_or(0.0, |pos| (r.support.len() - pos) as f64))
                    .collect();
                let fit = ols_refit(self.x, self.y, &r.support, &ranking)?;
                (fit.beta, f64::NAN)
            }
            m => {
                let slot = family_slot(m).expect("path family");
                let tuning = self.family(m, slot)?;
                diag.grid = tuning.grid.clone();
                diag.ridge_lambda = tuning.ridge_lambda;
                let idx = match id.rule {
                    Rule::Min | Rule::OneSe => {
                        let cv = self.cv_for(m, tuning)?;
                        diag.cv = Some(cv.clone());
                        if id.rule == Rule::Min {
                            cv.idx_min
                        } else {
                            cv.idx_1se
                        }
                    }
                    Rule::Bic => {
                        if tuning.bic.get().is_none() {
                            let _ = tuning.bic.set(bic_select(self.x, self.y, &tuning.path)?);
                        }
                        let b = tuning.bic.get().expect("set above");
                        diag.bic = Some(b.clone());
                        b.chosen
                    }
                    Rule::Fixed => unreachable!("rejected by supports()"),
                };
                diag.chosen_index = Some(idx);
                let beta = tuning.path[idx]
                    .clone()
                    .ok_or_else(|| Error::InvalidParameter(format!("selected candidate {idx} has no full-data fit")))?;
                let lambda = if m == Method::RelaxL {
                    let nphi = self.cfg.relax_phis.len();
                    diag.phi = Some(self.cfg.relax_phis[idx % nphi]);
                    tuning.grid[idx / nphi]
                } else if m == Method::SqrtL {
                    tuning.grid[idx] * (self.n() as f64).sqrt()
                } else {
                    tuning.grid[idx]
                };
                (beta, lambda)
            }
        };
        let fit = FitResult::new(beta, lambda, 0, true);
        let ranking: Vec<f64> = fit.beta.iter().map(|b| b.abs()).collect();
        let refit = ols_refit(self.x_raw, self.y, &fit.support, &ranking)?;
        if refit.truncated {
            diag.notes.push(format!("support truncated to {} columns before refit", refit.used.len() + refit.dropped.len()));
        }
        if !refit.dropped.is_empty() {
            diag.notes.push(format!("collinear columns dropped from refit: {:?}", refit.dropped));
        }
        let mut fit = fit;
        fit.refit_beta = Some(refit.beta.clone());
        Ok(TuneOutcome { id, fit, refit, diagnostics: diag })
    }

    fn family(&self, m: Method, slot: usize) -> Result<&PathTuning> {
        if self.families[slot].get().is_none() {
            let t = self.build_family(m)?;
            let _ = self.families[slot].set(t);
        }
        Ok(self.families[slot].get().expect("set above"))
    }

    fn build_family(&self, m: Method) -> Result<PathTuning> {
        let cfg = self.cfg;
        let control = cfg.control();
        let prob = self.problem();
        let mut ridge_lambda = None;
        let mut weights = None;
        let grid = match m {
            Method::Lasso | Method::Scad | Method::RelaxL | Method::Dantzig => {
                lambda_grid(self.x, self.y, cfg.n_lambda, Some(self.eps()))?.values
            }
            Method::AdapL => {
                let (w, rl) = self.ridge_weights()?;
                ridge_lambda = Some(rl);
                let lmax = prob.lambda_max(Some(&w));
                weights = Some(w);
                log_grid(lmax, cfg.n_lambda, self.eps())?.values
            }
            Method::SqrtL => {
                let sigma0 = prob.yty().sqrt();
                let lmax = prob.lambda_max(None);
                if !(sigma0 > 0.0) {
                    return Err(Error::ZeroResponse);
                }
                log_grid(lmax / sigma0, cfg.n_lambda, self.eps())?.values
            }
            _ => unreachable!("not a path family"),
        };
        if m == Method::Dantzig && self.p() > cfg.dantzig_max_p {
            return Err(Error::Unsupported(format!(
                "Dantzig selector limited to p <= {} (dense simplex), got p = {}",
                cfg.dantzig_max_p,
                self.p()
            )));
        }
        let path = fit_path(m, self.x, self.y, prob, &grid, weights.as_deref(), cfg, &control)?;
        Ok(PathTuning { grid, path, cv: OnceCell::new(), bic: OnceCell::new(), ridge_lambda, weights })
    }

    fn cv_for<'t>(&self, m: Method, tuning: &'t PathTuning) -> Result<&'t CvSummary> {
        if tuning.cv.get().is_none() {
            let cfg = self.cfg;
            let control = cfg.control();
            let folds = self.folds()?;
            let n_cand = tuning.path.len();
            let cv = kfold_cv(self.x, self.y, folds, cfg.folds, n_cand, |fd: &FoldData| {
                let prob = CdProblem::new(&fd.x, &fd.y);
                fit_path(m, &fd.x, &fd.y, &prob, &tuning.grid, tuning.weights.as_deref(), cfg, &control)
            })?;
            let _ = tuning.cv.set(cv);
        }
        Ok(tuning.cv.get().expect("set above"))
    }

    /// Adaptive weights from a ridge fit whose penalty is chosen by CV (min rule).
    fn ridge_weights(&self) -> Result<(Vec<f64>, f64)> {
        let cfg = self.cfg;
        let lmax = self.problem().lambda_max(None) * cfg.ridge_max_factor;
        let grid = log_grid(lmax, cfg.n_lambda, self.eps())?.values;
        let folds = self.folds()?;
        let cv = kfold_cv(self.x, self.y, folds, cfg.folds, grid.len(), |fd: &FoldData| {
            let solver = RidgeSolver::new(&fd.x, &fd.y);
            Ok(grid.iter().map(|&l| Some(solver.solve(l))).collect())
        })?;
        let rl = grid[cv.idx_min];
        let beta = RidgeSolver::new(self.x, self.y).solve(rl);
        Ok((adaptive_weights(&beta, cfg.adaptive_q)?, rl))
    }
}

/// Coefficients for every candidate of a path family on one dataset.
#[allow(clippy::too_many_arguments)]
fn fit_path(
    m: Method,
    x: &DMatrix<f64>,
    y: &[f64],
    prob: &CdProblem,
    grid: &[f64],
    weights: Option<&[f64]>,
    cfg: &TuneConfig,
    control: &SolverControl,
) -> Result<Vec<Option<Vec<f64>>>> {
    Ok(match m {
        Method::Lasso | Method::AdapL => lasso_path(prob, weights, grid, control).into_iter().map(|f| Some(f.beta)).collect(),
        Method::Scad => scad_path(prob, grid, cfg.scad_a, control).into_iter().map(|f| Some(f.beta)).collect(),
        Method::RelaxL => {
            let stage1 = lasso_path(prob, None, grid, control);
            let mut out = Vec::with_capacity(grid.len() * cfg.relax_phis.len());
            for s in &stage1 {
                for &phi in &cfg.relax_phis {
                    out.push(relaxed_from_stage1(prob, s, phi, control).ok().map(|f| f.beta));
                }
            }
            out
        }
        Method::Dantzig => {
            let mut solver = DantzigSolver::new(x, y)?;
            let mut out = Vec::with_capacity(grid.len());
            for &l in grid {
                match solver.solve(l) {
                    Ok(s) => out.push(Some(s.beta)),
                    Err(_) => {
                        out.push(None);
                        solver = DantzigSolver::new(x, y)?;
                    }
                }
            }
            out
        }
        Method::SqrtL => {
            // A collapsing noise estimate ends the path; smaller penalties interpolate too.
            let mut out = Vec::with_capacity(grid.len());
            let mut warm: Option<Vec<f64>> = None;
            let mut dead = false;
            for &l0 in grid {
                if dead {
                    out.push(None);
                    continue;
                }
                match scaled_lasso_problem(prob, l0, warm.as_deref(), control) {
                    Ok(s) => {
                        warm = Some(s.fit.beta.clone());
                        out.push(Some(s.fit.beta));
                    }
                    Err(_) => {
                        dead = true;
                        out.push(None);
                    }
                }
            }
            out
        }
        Method::ScalL | Method::DcVs => unreachable!("not a path family"),
    })
}

/// One-shot convenience wrapper over [`Tuner`].
pub fn tune_and_refit(
    id: MethodId,
    x_sel: &DMatrix<f64>,
    x_raw: &DMatrix<f64>,
    y: &[f64],
    cfg: &TuneConfig,
    stream: RngStream,
) -> Result<TuneOutcome> {
    Tuner::new(x_sel, x_raw, y, cfg, stream)?.run(id)
}
