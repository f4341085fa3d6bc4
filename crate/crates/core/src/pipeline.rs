//! Real-data protocol: ingestion, Box-Cox, Mahalanobis trimming and repeated
//! train/test evaluation of selected supports.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::methods::{MethodId, TuneConfig, Tuner};
use crate::numerics::{center_and_standardize, compensated_mean, compensated_sum, RngStream, StandardizationMode};
use crate::solvers::ols_refit;

const SPLIT_TAG: u64 = 0x5B17;
const SELECT_TAG: u64 = 0x5E1E;
/// Stream id of the full-sample selection; repetitions use ids `0..repetitions`.
const FULL_SAMPLE_STREAM: u64 = u64::MAX;

/// Numeric table with one designated response column.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub names: Vec<String>,
    /// n x (p + 1), response included.
    pub data: DMatrix<f64>,
    pub response: usize,
    /// Rows dropped at ingestion for empty or NA cells.
    pub rejected_rows: usize,
}

impl TabularDataset {
    pub fn new(names: Vec<String>, data: DMatrix<f64>, response: usize) -> Result<Self> {
        if names.len() != data.ncols() || response >= data.ncols() {
            return Err(Error::DimensionMismatch(format!("{} names for {} columns, response {response}", names.len(), data.ncols())));
        }
        if data.ncols() < 2 {
            return Err(Error::DimensionMismatch("need at least one covariate besides the response".into()));
        }
        Ok(Self { names, data, response, rejected_rows: 0 })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols() - 1
    }

    pub fn response_name(&self) -> &str {
        &self.names[self.response]
    }

    /// Covariate column indices in table order.
    pub fn covariate_columns(&self) -> Vec<usize> {
        (0..self.data.ncols()).filter(|&c| c != self.response).collect()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariate_columns().into_iter().map(|c| self.names[c].clone()).collect()
    }

    pub fn x(&self) -> DMatrix<f64> {
        let cols = self.covariate_columns();
        DMatrix::from_fn(self.n(), cols.len(), |i, j| self.data[(i, cols[j])])
    }

    pub fn y(&self) -> Vec<f64> {
        self.data.column(self.response).iter().copied().collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let data = DMatrix::from_fn(rows.len(), self.data.ncols(), |i, j| self.data[(rows[i], j)]);
        Self { names: self.names.clone(), data, response: self.response, rejected_rows: self.rejected_rows }
    }
}

fn is_gap(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "?")
}

/// Parses a headed CSV. Rows with empty or NA cells are dropped and counted;
/// any other non-numeric cell is an error. Row numbers in errors are 1-based data rows.
pub fn parse_csv<R: Read>(input: R, response_name: &str) -> Result<TabularDataset> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let names: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    let response = names.iter().position(|h| h == response_name).ok_or_else(|| Error::MissingResponse(response_name.to_string()))?;
    let mut values = Vec::new();
    let mut rows = 0;
    let mut rejected = 0;
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(Error::DimensionMismatch(format!("row {} has {} cells, header has {}", i + 1, rec.len(), names.len())));
        }
        if rec.iter().any(is_gap) {
            rejected += 1;
            continue;
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::ParseFailure { row: i + 1, col: j + 1, value: cell.to_string() })?;
            if !v.is_finite() {
                return Err(Error::ParseFailure { row: i + 1, col: j + 1, value: cell.to_string() });
            }
            values.push(v);
        }
        rows += 1;
    }
    let data = DMatrix::from_row_slice(rows, names.len(), &values);
    let mut ds = TabularDataset::new(names, data, response)?;
    ds.rejected_rows = rejected;
    Ok(ds)
}

pub fn load_csv(path: impl AsRef<Path>, response_name: &str) -> Result<TabularDataset> {
    parse_csv(File::open(path)?, response_name)
}

pub fn boxcox_with_lambda(column: &[f64], shift: f64, lambda: f64) -> Result<Vec<f64>> {
    check_positive(column, shift, 0)?;
    Ok(column.iter().map(|&x| boxcox_value(x + shift, lambda)).collect())
}

fn boxcox_value(x: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        x.ln()
    } else {
        (x.powf(lambda) - 1.0) / lambda
    }
}

fn check_positive(column: &[f64], shift: f64, index: usize) -> Result<()> {
    if column.iter().any(|&x| !(x + shift > 0.0)) {
        return Err(Error::NonPositiveAfterShift { column: index });
    }
    Ok(())
}

/// Profile log-likelihood `-n/2 ln s2(lambda) + (lambda - 1) sum ln x`.
pub fn boxcox_loglik(shifted_logs: &[f64], shifted: &[f64], lambda: f64) -> f64 {
    let n = shifted.len() as f64;
    let z: Vec<f64> = shifted.iter().map(|&x| boxcox_value(x, lambda)).collect();
    let m = compensated_mean(&z);
    let s2 = compensated_sum(z.iter().map(|v| (v - m).powi(2))) / n;
    -0.5 * n * s2.ln() + (lambda - 1.0) * compensated_sum(shifted_logs.iter().copied())
}

/// Grid search over `lambda in [-2, 2]` in steps of 0.01; first maximizer wins.
pub fn boxcox_transform(column: &[f64], shift: f64) -> Result<(Vec<f64>, f64)> {
    check_positive(column, shift, 0)?;
    let shifted: Vec<f64> = column.iter().map(|x| x + shift).collect();
    let logs: Vec<f64> = shifted.iter().map(|x| x.ln()).collect();
    let mut best = (f64::NEG_INFINITY, 1.0);
    for k in -200..=200 {
        let lambda = k as f64 / 100.0;
        let ll = boxcox_loglik(&logs, &shifted, lambda);
        if ll > best.0 {
            best = (ll, lambda);
        }
    }
    let lambda = best.1;
    Ok((shifted.iter().map(|&x| boxcox_value(x, lambda)).collect(), lambda))
}

/// Squared Mahalanobis distances of the rows to the column means.
pub fn mahalanobis_d2(data: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (n, q) = data.shape();
    if n < 2 {
        return Err(Error::DimensionMismatch("need at least two rows".into()));
    }
    let means: Vec<f64> = data.column_iter().map(|c| compensated_mean(c.as_slice())).collect();
    let centered = DMatrix::from_fn(n, q, |i, j| data[(i, j)] - means[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let chol = match cov.clone().cholesky() {
        Some(c) => c,
        None => {
            let ridge = 1e-8 * cov.trace() / q as f64;
            let reg = &cov + DMatrix::identity(q, q) * ridge;
            reg.cholesky().ok_or(Error::SingularCovariance)?
        }
    };
    let solved = chol.solve(&centered.transpose());
    Ok((0..n).map(|i| centered.row(i).transpose().dot(&solved.column(i))).collect())
}

/// Drops the `floor(fraction * n)` rows of least depth `1 / (1 + d2)` over all
/// columns, response included. Among equal distances the earlier row goes first. Returns the kept data
/// and the removed row indices (ascending).
pub fn mahalanobis_trim(ds: &TabularDataset, fraction: f64) -> Result<(TabularDataset, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!("trim fraction must lie in [0, 1), got {fraction}")));
    }
    let n = ds.n();
    let k = (fraction * n as f64).floor() as usize;
    if k == 0 {
        return Ok((ds.clone(), Vec::new()));
    }
    let d2 = mahalanobis_d2(&ds.data)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d2[b].total_cmp(&d2[a]).then(a.cmp(&b)));
    let mut removed: Vec<usize> = order[..k].to_vec();
    removed.sort_unstable();
    let kept: Vec<usize> = (0..n).filter(|i| removed.binary_search(i).is_err()).collect();
    Ok((ds.select_rows(&kept), removed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DevianceCenter {
    TestMean,
    TrainMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub boxcox: bool,
    pub boxcox_shift: f64,
    pub trim_fraction: f64,
    pub train_fraction: f64,
    /// Overrides `floor(train_fraction * n)` when set.
    pub train_size: Option<usize>,
    pub repetitions: usize,
    pub mode: StandardizationMode,
    pub methods: Vec<String>,
    pub base_seed: u64,
    pub deviance_center: DevianceCenter,
    /// Leakage-free variant: select on each training split instead of the full sample.
    pub per_split_selection: bool,
    pub tune: TuneConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            boxcox: true,
            boxcox_shift: 0.01,
            trim_fraction: 0.05,
            train_fraction: 0.8,
            train_size: None,
            repetitions: 100,
            mode: StandardizationMode::Raw,
            methods: MethodId::all_standard().iter().map(|m| m.to_string()).collect(),
            base_seed: 0,
            deviance_center: DevianceCenter::TestMean,
            per_split_selection: false,
            tune: TuneConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64, name: &str| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        frac(self.train_fraction, "train_fraction")?;
        if self.trim_fraction != 0.0 {
            frac(self.trim_fraction, "trim_fraction")?;
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidParameter("repetitions must be >= 1".into()));
        }
        if !(self.boxcox_shift >= 0.0) {
            return Err(Error::InvalidParameter(format!("boxcox_shift must be >= 0, got {}", self.boxcox_shift)));
        }
        self.method_ids()?;
        self.tune.validate()
    }

    pub fn method_ids(&self) -> Result<Vec<MethodId>> {
        self.methods.iter().map(|m| MethodId::parse(m)).collect()
    }

    pub fn train_rows(&self, n: usize) -> Result<usize> {
        let t = self.train_size.unwrap_or((self.train_fraction * n as f64).floor() as usize);
        if t < 2 || t >= n {
            return Err(Error::InvalidParameter(format!("training size {t} invalid for n = {n}")));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnLambda {
    pub name: String,
    pub lambda: f64,
}

/// Preprocessing sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub response: String,
    pub n_loaded: usize,
    pub rejected_rows: usize,
    pub boxcox_shift: Option<f64>,
    pub boxcox: Vec<ColumnLambda>,
    /// Indices into the loaded rows.
    pub removed_rows: Vec<usize>,
    pub n_final: usize,
}

impl Provenance {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Box-Cox on every column (when enabled), then Mahalanobis trimming.
pub fn preprocess(ds: &TabularDataset, cfg: &PipelineConfig) -> Result<(TabularDataset, Provenance)> {
    let mut out = ds.clone();
    let mut lambdas = Vec::new();
    if cfg.boxcox {
        for j in 0..out.data.ncols() {
            let col: Vec<f64> = out.data.column(j).iter().copied().collect();
            let (t, l) = boxcox_transform(&col, cfg.boxcox_shift).map_err(|e| match e {
                Error::NonPositiveAfterShift { .. } => Error::NonPositiveAfterShift { column: j },
                other => other,
            })?;
            out.data.column_mut(j).copy_from_slice(&t);
            lambdas.push(ColumnLambda { name: out.names[j].clone(), lambda: l });
        }
    }
    let (trimmed, removed) = mahalanobis_trim(&out, cfg.trim_fraction)?;
    let prov = Provenance {
        response: ds.response_name().to_string(),
        n_loaded: ds.n(),
        rejected_rows: ds.rejected_rows,
        boxcox_shift: cfg.boxcox.then_some(cfg.boxcox_shift),
        boxcox: lambdas,
        removed_rows: removed,
        n_final: trimmed.n(),
    };
    Ok((trimmed, prov))
}

/// Train/test partition of repetition `k`; both index lists ascending.
pub fn split_rows(n: usize, train: usize, base_seed: u64, k: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut RngStream::new(base_seed, k).child(SPLIT_TAG).rng());
    let mut tr = idx[..train].to_vec();
    let mut te = idx[train..].to_vec();
    tr.sort_unstable();
    te.sort_unstable();
    (tr, te)
}

/// Test-set scores of one OLS refit (with intercept) on the training rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitScore {
    pub mse: f64,
    pub pct_dev: f64,
    pub used: usize,
    pub truncated: bool,
}

pub fn score_split(
    x: &DMatrix<f64>,
    y: &[f64],
    support: &[usize],
    ranking: &[f64],
    train: &[usize],
    test: &[usize],
    center: DevianceCenter,
) -> Result<SplitScore> {
    let p = x.ncols();
    let xt = DMatrix::from_fn(train.len(), p, |i, j| x[(train[i], j)]);
    let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let xm: Vec<f64> = xt.column_iter().map(|c| compensated_mean(c.as_slice())).collect();
    let ym = compensated_mean(&yt);
    let xc = DMatrix::from_fn(train.len(), p, |i, j| xt[(i, j)] - xm[j]);
    let yc: Vec<f64> = yt.iter().map(|v| v - ym).collect();
    let refit = ols_refit(&xc, &yc, support, ranking)?;
    let intercept = ym - compensated_sum(refit.used.iter().map(|&j| xm[j] * refit.beta[j]));
    let pred: Vec<f64> = test.iter().map(|&i| intercept + compensated_sum(refit.used.iter().map(|&j| x[(i, j)] * refit.beta[j]))).collect();
    let ytest: Vec<f64> = test.iter().map(|&i| y[i]).collect();
    let rss = compensated_sum(ytest.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)));
    let c = match center {
        DevianceCenter::TestMean => compensated_mean(&ytest),
        DevianceCenter::TrainMean => ym,
    };
    let rss0 = compensated_sum(ytest.iter().map(|v| (v - c).powi(2)));
    Ok(SplitScore {
        mse: rss / test.len() as f64,
        pct_dev: if rss0 > 0.0 { (rss0 - rss) / rss0 } else { 0.0 },
        used: refit.used.len(),
        truncated: refit.truncated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealDataRow {
    pub method: String,
    pub mode: StandardizationMode,
    /// Full-sample support (empty with per-split selection).
    pub support: Vec<String>,
    pub mean_size: f64,
    pub mse: f64,
    pub pct_dev: f64,
    pub repetitions: usize,
    pub failures: usize,
    pub truncated: usize,
    pub first_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealDataReport {
    pub dataset: String,
    pub n: usize,
    pub p: usize,
    pub train: usize,
    pub rows: Vec<RealDataRow>,
}

struct Selected {
    support: Vec<usize>,
    ranking: Vec<f64>,
}

fn select(x: &DMatrix<f64>, y: &[f64], ids: &[MethodId], cfg: &PipelineConfig, stream: RngStream) -> Vec<Result<Selected>> {
    let std = match center_and_standardize(x, y, cfg.mode) {
        Ok(s) => s,
        Err(e) => return ids.iter().map(|_| Err(clone_err(&e))).collect(),
    };
    let raw = match center_and_standardize(x, y, StandardizationMode::Raw) {
        Ok(s) => s,
        Err(e) => return ids.iter().map(|_| Err(clone_err(&e))).collect(),
    };
    let tuner = match Tuner::new(std.design.values(), raw.design.values(), &std.response, &cfg.tune, stream) {
        Ok(t) => t,
        Err(e) => return ids.iter().map(|_| Err(clone_err(&e))).collect(),
    };
    ids.iter()
        .map(|&id| {
            let o = tuner.run(id)?;
            let ranking = o.fit.beta.iter().map(|b| b.abs()).collect();
            Ok(Selected { support: o.fit.support, ranking })
        })
        .collect()
}

fn clone_err(e: &Error) -> Error {
    Error::InvalidParameter(e.to_string())
}

/// Scores a given support over the configured repetitions.
pub fn evaluate_support(ds: &TabularDataset, support: &[usize], ranking: &[f64], cfg: &PipelineConfig) -> Result<RealDataRow> {
    cfg.validate()?;
    let x = ds.x();
    let y = ds.y();
    let train = cfg.train_rows(ds.n())?;
    let scores: Vec<Result<SplitScore>> = (0..cfg.repetitions as u64)
        .into_par_iter()
        .map(|k| {
            let (tr, te) = split_rows(ds.n(), train, cfg.base_seed, k);
            score_split(&x, &y, support, ranking, &tr, &te, cfg.deviance_center)
        })
        .collect();
    let names = ds.covariate_names();
    Ok(summarize("fixed".into(), cfg.mode, support.iter().map(|&j| names[j].clone()).collect(), scores))
}

fn summarize(method: String, mode: StandardizationMode, support: Vec<String>, scores: Vec<Result<SplitScore>>) -> RealDataRow {
    let first_error = scores.iter().find_map(|s| s.as_ref().err().map(|e| e.to_string()));
    let failures = scores.iter().filter(|s| s.is_err()).count();
    let ok: Vec<SplitScore> = scores.into_iter().filter_map(|s| s.ok()).collect();
    let k = ok.len();
    let mean = |f: &dyn Fn(&SplitScore) -> f64| if k == 0 { f64::NAN } else { compensated_sum(ok.iter().map(f)) / k as f64 };
    RealDataRow {
        method,
        mode,
        support,
        mean_size: mean(&|s| s.used as f64),
        mse: mean(&|s| s.mse),
        pct_dev: mean(&|s| s.pct_dev),
        repetitions: k,
        failures,
        truncated: ok.iter().filter(|s| s.truncated).count(),
        first_error,
    }
}

/// Selection on the full sample (or per split when configured), then repeated
/// train/test OLS scoring. `ds` should already be preprocessed.
pub fn real_data_evaluate(ds: &TabularDataset, cfg: &PipelineConfig) -> Result<RealDataReport> {
    cfg.validate()?;
    let ids = cfg.method_ids()?;
    let x = ds.x();
    let y = ds.y();
    let n = ds.n();
    let train = cfg.train_rows(n)?;
    let names = ds.covariate_names();
    let reps = cfg.repetitions as u64;
    let mut rows = Vec::with_capacity(ids.len());
    if cfg.per_split_selection {
        let per_rep: Vec<Vec<Result<SplitScore>>> = (0..reps)
            .into_par_iter()
            .map(|k| {
                let (tr, te) = split_rows(n, train, cfg.base_seed, k);
                let xt = DMatrix::from_fn(tr.len(), x.ncols(), |i, j| x[(tr[i], j)]);
                let yt: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
                select(&xt, &yt, &ids, cfg, RngStream::new(cfg.base_seed, k).child(SELECT_TAG))
                    .into_iter()
                    .map(|s| s.and_then(|s| score_split(&x, &y, &s.support, &s.ranking, &tr, &te, cfg.deviance_center)))
                    .collect()
            })
            .collect();
        for (m, id) in ids.iter().enumerate() {
            let scores: Vec<Result<SplitScore>> = per_rep.iter().map(|r| r[m].as_ref().map(|s| *s).map_err(clone_err)).collect();
            rows.push(summarize(id.to_string(), cfg.mode, Vec::new(), scores));
        }
    } else {
        let selections = select(&x, &y, &ids, cfg, RngStream::new(cfg.base_seed, FULL_SAMPLE_STREAM).child(SELECT_TAG));
        for (id, sel) in ids.iter().zip(selections) {
            match sel {
                Ok(s) => {
                    let scores: Vec<Result<SplitScore>> = (0..reps)
                        .into_par_iter()
                        .map(|k| {
                            let (tr, te) = split_rows(n, train, cfg.base_seed, k);
                            score_split(&x, &y, &s.support, &s.ranking, &tr, &te, cfg.deviance_center)
                        })
                        .collect();
                    let support = s.support.iter().map(|&j| names[j].clone()).collect();
                    rows.push(summarize(id.to_string(), cfg.mode, support, scores));
                }
                Err(e) => rows.push(RealDataRow {
                    method: id.to_string(),
                    mode: cfg.mode,
                    support: Vec::new(),
                    mean_size: f64::NAN,
                    mse: f64::NAN,
                    pct_dev: f64::NAN,
                    repetitions: 0,
                    failures: cfg.repetitions,
                    truncated: 0,
                    first_error: Some(e.to_string()),
                }),
            }
        }
    }
    Ok(RealDataReport { dataset: ds.response_name().to_string(), n, p: ds.p(), train, rows })
}

pub const REAL_HEADER: [&str; 11] = ["dataset", "n", "p", "train", "method", "mode", "size", "MSE", "%Dev", "repetitions", "failures"];

pub fn write_report_csv<W: Write>(report: &RealDataReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REAL_HEADER)?;
    for r in &report.rows {
        w.write_record([
            report.dataset.clone(),
            report.n.to_string(),
            report.p.to_string(),
            report.train.to_string(),
            r.method.clone(),
            r.mode.label().to_string(),
            r.mean_size.to_string(),
            r.mse.to_string(),
            r.pct_dev.to_string(),
            r.repetitions.to_string(),
            r.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
