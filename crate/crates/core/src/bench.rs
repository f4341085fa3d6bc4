//! Selection and prediction metrics, the Monte Carlo runner and table output.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::methods::{MethodId, TuneConfig, Tuner};
use crate::numerics::{build_covariance, center_and_standardize, compensated_sum, mat_vec, RngStream, StandardizationMode};
use crate::scenario::{generate_with, ScenarioName, ScenarioSpec, SimulatedDataset};

const TUNE_TAG: u64 = 0x70E5;

/// Per-fit outcome metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub size: usize,
    pub mse: f64,
    pub pct_dev: f64,
    pub selected: Vec<bool>,
}

/// In-sample metrics: `MSE = RSS / n`, `%Dev = (RSS0 - RSS) / RSS0`, TP/FP against the true support.
pub fn compute_metrics(support: &[usize], refit_beta: &[f64], data: &SimulatedDataset) -> Result<Metrics> {
    let (n, p) = data.x.shape();
    if refit_beta.len() != p {
        return Err(Error::DimensionMismatch(format!("refit has {} coefficients, design has {p} columns", refit_beta.len())));
    }
    let ybar = compensated_sum(data.y.iter().copied()) / n as f64;
    let fitted = mat_vec(&data.x, refit_beta);
    let rss = compensated_sum(data.y.iter().zip(&fitted).map(|(y, f)| (y - f).powi(2)));
    let rss0 = compensated_sum(data.y.iter().map(|y| (y - ybar).powi(2)));
    let mut selected = vec![false; p];
    for &j in support {
        if j >= p {
            return Err(Error::DimensionMismatch(format!("support index {j} out of range for p = {p}")));
        }
        selected[j] = true;
    }
    let truth: std::collections::BTreeSet<usize> = data.truth.support.iter().copied().collect();
    let size = selected.iter().filter(|b| **b).count();
    let tp = (0..p).filter(|j| selected[*j] && truth.contains(j)).count();
    let pct_dev = if rss0 > 0.0 { (rss0 - rss) / rss0 } else { 0.0 };
    Ok(Metrics { tp, fp: size - tp, size, mse: rss / n as f64, pct_dev, selected })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub scenario: ScenarioName,
    pub n: usize,
    pub rho: Option<f64>,
    pub method: MethodId,
    pub mode: StandardizationMode,
    pub replicate: u64,
    /// NaN metrics and an empty selection when `error` is set.
    pub tp: f64,
    pub fp: f64,
    pub size: f64,
    pub mse: f64,
    pub pct_dev: f64,
    pub selected: Vec<bool>,
    pub checksum: String,
    pub error: Option<String>,
}

impl MetricsRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub replicate: u64,
    pub method: String,
    pub mode: StandardizationMode,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct MonteCarloRun {
    pub spec: ScenarioSpec,
    pub sigma_eps: f64,
    pub records: Vec<MetricsRecord>,
    pub failures: Vec<Failure>,
    /// Dataset checksum per replicate.
    pub checksums: Vec<String>,
}

/// Options of one Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub methods: Vec<String>,
    pub modes: Vec<StandardizationMode>,
    pub replicates: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub tune: TuneConfig,
}

impl RunConfig {
    pub fn method_ids(&self) -> Result<Vec<MethodId>> {
        let ids = self.methods.iter().map(|m| MethodId::parse(m)).collect::<Result<Vec<_>>>()?;
        if ids.is_empty() {
            return Err(Error::InvalidParameter("no methods requested".into()));
        }
        Ok(ids)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidParameter("replicates must be >= 1".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::InvalidParameter("no standardization modes requested".into()));
        }
        self.method_ids()?;
        self.tune.validate()
    }
}

/// Replicate `i` uses `RngStream(base_seed, i)`; output order is (replicate, method, mode)
/// whatever the thread count. `threads == 0` keeps the ambient rayon pool.
pub fn run_monte_carlo(spec: &ScenarioSpec, cfg: &RunConfig, threads: usize) -> Result<MonteCarloRun> {
    spec.validate()?;
    cfg.validate()?;
    let ids = cfg.method_ids()?;
    let truth = spec.truth()?;
    let sigma = build_covariance(&spec.covariance()?)?;
    let work = || -> Result<Vec<(Vec<MetricsRecord>, String)>> {
        (0..cfg.replicates as u64)
            .into_par_iter()
            .map(|i| {
                let stream = RngStream::new(cfg.base_seed, i);
                let data = generate_with(spec.n, &sigma, truth.clone(), &stream)?;
                Ok((run_replicate(spec, &data, &ids, &cfg.modes, &cfg.tune), data.checksum()))
            })
            .collect()
    };
    let per_rep = if threads == 0 {
        work()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(work)?
    };
    let mut records = Vec::new();
    let mut checksums = Vec::new();
    for (r, c) in per_rep {
        records.extend(r);
        checksums.push(c);
    }
    records.sort_by(|a, b| (a.replicate, a.method, a.mode).cmp(&(b.replicate, b.method, b.mode)));
    let failures = records
        .iter()
        .filter_map(|r| {
            r.error.as_ref().map(|e| Failure { replicate: r.replicate, method: r.method.to_string(), mode: r.mode, error: e.clone() })
        })
        .collect();
    Ok(MonteCarloRun { spec: spec.clone(), sigma_eps: truth.sigma_eps, records, failures, checksums })
}

/// All methods and modes on one dataset. Folds and permutations are shared across modes.
pub fn run_replicate(
    spec: &ScenarioSpec,
    data: &SimulatedDataset,
    ids: &[MethodId],
    modes: &[StandardizationMode],
    tune: &TuneConfig,
) -> Vec<MetricsRecord> {
    let checksum = data.checksum();
    let mut out = Vec::with_capacity(ids.len() * modes.len());
    let blank = |id: MethodId, mode, err: String| MetricsRecord {
        scenario: spec.name,
        n: spec.n,
        rho: spec.rho,
        method: id,
        mode,
        replicate: data.replicate,
        tp: f64::NAN,
        fp: f64::NAN,
        size: f64::NAN,
        mse: f64::NAN,
        pct_dev: f64::NAN,
        selected: Vec::new(),
        checksum: checksum.clone(),
        error: Some(err),
    };
    for &mode in modes {
        let std = match center_and_standardize(&data.x, &data.y, mode) {
            Ok(s) => s,
            Err(e) => {
                out.extend(ids.iter().map(|&id| blank(id, mode, e.to_string())));
                continue;
            }
        };
        let xs = std.design.values();
        let tuner = match Tuner::new(xs, &data.x, &std.response, tune, data.stream.child(TUNE_TAG)) {
            Ok(t) => t,
            Err(e) => {
                out.extend(ids.iter().map(|&id| blank(id, mode, e.to_string())));
                continue;
            }
        };
        for &id in ids {
            let outcome = tuner.run(id).and_then(|o| compute_metrics(&o.fit.support, &o.refit.beta, data));
            out.push(match outcome {
                Ok(m) => MetricsRecord {
                    scenario: spec.name,
                    n: spec.n,
                    rho: spec.rho,
                    method: id,
                    mode,
                    replicate: data.replicate,
                    tp: m.tp as f64,
                    fp: m.fp as f64,
                    size: m.size as f64,
                    mse: m.mse,
                    pct_dev: m.pct_dev,
                    selected: m.selected,
                    checksum: checksum.clone(),
                    error: None,
                },
                Err(e) => blank(id, mode, e.to_string()),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: ScenarioName,
    pub n: usize,
    pub rho: Option<f64>,
    pub method: String,
    pub mode: StandardizationMode,
    pub tp: f64,
    pub fp: f64,
    pub size: f64,
    pub mse: f64,
    pub pct_dev: f64,
    /// Mean MSE in `[0.9, 1.1] * oracle_mse`.
    pub gi: bool,
    /// Mean MSE at or above `oracle_mse`.
    pub over: bool,
    pub oracle_mse: f64,
    pub replicates: usize,
    pub excluded: usize,
    pub selection_frequency: Vec<f64>,
}

pub fn gi_flag(mse: f64, oracle_mse: f64) -> bool {
    mse >= 0.9 * oracle_mse && mse <= 1.1 * oracle_mse
}

pub fn over_flag(mse: f64, oracle_mse: f64) -> bool {
    mse >= oracle_mse
}

/// Means per (method, mode) over non-failed records; independent of record order.
pub fn aggregate(records: &[MetricsRecord], sigma_eps: f64) -> Vec<AggregateRow> {
    let oracle = sigma_eps * sigma_eps;
    let mut groups: BTreeMap<(MethodId, StandardizationMode), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.method, r.mode)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((method, mode), mut rs)| {
            rs.sort_by_key(|r| r.replicate);
            let ok: Vec<&&MetricsRecord> = rs.iter().filter(|r| !r.failed()).collect();
            let k = ok.len() as f64;
            let mean = |f: &dyn Fn(&MetricsRecord) -> f64| {
                if ok.is_empty() { f64::NAN } else { compensated_sum(ok.iter().map(|r| f(r))) / k }
            };
            let mse = mean(&|r| r.mse);
            let p = ok.iter().map(|r| r.selected.len()).max().unwrap_or(0);
            let selection_frequency = (0..p)
                .map(|j| ok.iter().filter(|r| r.selected.get(j).copied().unwrap_or(false)).count() as f64 / k)
                .collect();
            let first = rs[0];
            AggregateRow {
                scenario: first.scenario,
                n: first.n,
                rho: first.rho,
                method: method.to_string(),
                mode,
                tp: mean(&|r| r.tp),
                fp: mean(&|r| r.fp),
                size: mean(&|r| r.size),
                mse,
                pct_dev: mean(&|r| r.pct_dev),
                gi: gi_flag(mse, oracle),
                over: over_flag(mse, oracle),
                oracle_mse: oracle,
                replicates: ok.len(),
                excluded: rs.len() - ok.len(),
                selection_frequency,
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: [&str; 15] = [
    "scenario", "n", "rho", "method", "mode", "TP", "FP", "MSE", "%Dev", "GI", "OVER", "size", "oracle_mse", "replicates", "excluded",
];

pub const RECORD_HEADER: [&str; 17] = [
    "scenario", "n", "rho", "method", "mode", "TP", "FP", "MSE", "%Dev", "GI", "OVER", "replicate", "size", "oracle_mse", "checksum",
    "selected", "error",
];

fn rho_cell(rho: Option<f64>) -> String {
    rho.map(|r| r.to_string()).unwrap_or_default()
}

pub fn write_summary_csv<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.scenario.label().to_string(),
            r.n.to_string(),
            rho_cell(r.rho),
            r.method.clone(),
            r.mode.label().to_string(),
            r.tp.to_string(),
            r.fp.to_string(),
            r.mse.to_string(),
            r.pct_dev.to_string(),
            r.gi.to_string(),
            r.over.to_string(),
            r.size.to_string(),
            r.oracle_mse.to_string(),
            r.replicates.to_string(),
            r.excluded.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-replicate rows; GI and OVER compare the single-replicate MSE with `oracle_mse`.
pub fn write_records_csv<W: Write>(records: &[MetricsRecord], oracle_mse: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        let bits: String = r.selected.iter().map(|b| if *b { '1' } else { '0' }).collect();
        w.write_record([
            r.scenario.label().to_string(),
            r.n.to_string(),
            rho_cell(r.rho),
            r.method.to_string(),
            r.mode.label().to_string(),
            r.tp.to_string(),
            r.fp.to_string(),
            r.mse.to_string(),
            r.pct_dev.to_string(),
            gi_flag(r.mse, oracle_mse).to_string(),
            over_flag(r.mse, oracle_mse).to_string(),
            r.replicate.to_string(),
            r.size.to_string(),
            oracle_mse.to_string(),
            r.checksum.clone(),
            bits,
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_cell<T: std::str::FromStr>(rec: &csv::StringRecord, row: usize, col: usize) -> Result<T> {
    let raw = rec.get(col).unwrap_or("");
    raw.parse().map_err(|_| Error::ParseFailure { row, col, value: raw.to_string() })
}

/// Inverse of [`write_summary_csv`]; selection frequencies are not stored there.
pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<AggregateRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let rho = match rec.get(2).unwrap_or("") {
            "" => None,
            _ => Some(parse_cell(&rec, row, 2)?),
        };
        let mode_raw = rec.get(4).unwrap_or("");
        rows.push(AggregateRow {
            scenario: rec.get(0).unwrap_or("").parse()?,
            n: parse_cell(&rec, row, 1)?,
            rho,
            method: rec.get(3).unwrap_or("").to_string(),
            mode: StandardizationMode::parse(mode_raw).ok_or_else(|| Error::ParseFailure { row, col: 4, value: mode_raw.to_string() })?,
            tp: parse_cell(&rec, row, 5)?,
            fp: parse_cell(&rec, row, 6)?,
            mse: parse_cell(&rec, row, 7)?,
            pct_dev: parse_cell(&rec, row, 8)?,
            gi: parse_cell(&rec, row, 9)?,
            over: parse_cell(&rec, row, 10)?,
            size: parse_cell(&rec, row, 11)?,
            oracle_mse: parse_cell(&rec, row, 12)?,
            replicates: parse_cell(&rec, row, 13)?,
            excluded: parse_cell(&rec, row, 14)?,
            selection_frequency: Vec::new(),
        });
    }
    Ok(rows)
}

/// One table per scenario setting: methods down, modes across, oracle MSE in brackets.
/// GI means are bold; a trailing `^2` marks means at or above the oracle.
pub fn markdown_table(rows: &[AggregateRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let mut modes: Vec<StandardizationMode> = rows.iter().map(|r| r.mode).collect();
    modes.sort();
    modes.dedup();
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let rho = first.rho.map(|r| format!(" rho={r}")).unwrap_or_default();
    let mut s = format!("| {} n={}{} ({:.3}) |", first.scenario, first.n, rho, first.oracle_mse);
    for m in &modes {
        for c in ["TP", "FP", "MSE", "%Dev"] {
            s.push_str(&format!(" {} {c} |", m.label()));
        }
    }
    s.push('\n');
    s.push_str("|---|");
    s.push_str(&"---:|".repeat(4 * modes.len()));
    s.push('\n');
    for m in methods {
        s.push_str(&format!("| {m} |"));
        for mode in &modes {
            match rows.iter().find(|r| r.method == m && r.mode == *mode) {
                Some(r) => {
                    let mut mse = format!("{:.3}", r.mse);
                    if r.gi {
                        mse = format!("**{mse}**");
                    }
                    if r.over {
                        mse.push_str("^2");
                    }
                    s.push_str(&format!(" {:.2} | {:.2} | {mse} | {:.3} |", r.tp, r.fp, r.pct_dev));
                }
                None => s.push_str(&" - |".repeat(4)),
            }
        }
        s.push('\n');
    }
    s
}

/// Everything needed to replay a run bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub scenario: ScenarioSpec,
    pub run: RunConfig,
    pub sigma_eps: f64,
    pub dataset_checksums: Vec<String>,
    pub failures: Vec<Failure>,
}

impl RunManifest {
    pub fn from_run(command: &str, run: &MonteCarloRun, cfg: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            scenario: run.spec.clone(),
            run: cfg.clone(),
            sigma_eps: run.sigma_eps,
            dataset_checksums: run.checksums.clone(),
            failures: run.failures.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate;

    fn small_spec() -> ScenarioSpec {
        ScenarioSpec::new(ScenarioName::Ind, 40, None, 3).unwrap()
    }

    #[test]
    fn metric_edge_cases() {
        let data = generate(&small_spec(), &RngStream::new(1, 0)).unwrap();
        let zero = compute_metrics(&[], &vec![0.0; 100], &data).unwrap();
        let rss0: f64 = data.y.iter().map(|v| v * v).sum();
        assert!((zero.mse - rss0 / 40.0).abs() < 1e-12);
        assert_eq!((zero.pct_dev, zero.tp, zero.fp, zero.size), (0.0, 0, 0, 0));

        let truth: Vec<usize> = (0..10).collect();
        let m = compute_metrics(&truth, &data.truth.beta, &data).unwrap();
        assert_eq!((m.tp, m.fp), (10, 0));
        assert!(m.pct_dev <= 1.0 && m.mse >= 0.0);
        let m = compute_metrics(&[0, 50, 60], &vec![0.0; 100], &data).unwrap();
        assert_eq!((m.tp, m.fp, m.size), (1, 2, 3));
    }

    #[test]
    fn interpolation_gives_zero_mse() {
        let mut data = generate(&small_spec(), &RngStream::new(1, 0)).unwrap();
        data.y = mat_vec(&data.x, &data.truth.beta);
        let m = compute_metrics(&data.truth.support.clone(), &data.truth.beta.clone(), &data).unwrap();
        assert!(m.mse < 1e-20);
        assert!((m.pct_dev - 1.0).abs() < 1e-12);
    }

    fn record(method: &str, rep: u64, mse: f64) -> MetricsRecord {
        MetricsRecord {
            scenario: ScenarioName::RcInd,
            n: 300,
            rho: None,
            method: MethodId::parse(method).unwrap(),
            mode: StandardizationMode::Raw,
            replicate: rep,
            tp: 10.0,
            fp: rep as f64,
            size: 10.0 + rep as f64,
            mse,
            pct_dev: 0.9,
            selected: vec![rep % 2 == 0, true],
            checksum: String::new(),
            error: None,
        }
    }

    #[test]
    fn flags_follow_the_interval() {
        let s = 13.715_f64.sqrt();
        let rows = aggregate(&[record("lasso.1se", 0, 12.972)], s);
        assert!(rows[0].gi && !rows[0].over);
        let rows = aggregate(&[record("lasso.min", 0, 10.972)], s);
        assert!(!rows[0].gi && !rows[0].over);
        let rows = aggregate(&[record("adapl.1se", 0, 15.024)], s);
        assert!(rows[0].gi && rows[0].over);
    }

    #[test]
    fn aggregate_excludes_failures_and_ignores_order() {
        let mut recs: Vec<MetricsRecord> = (0..5).map(|i| record("lasso.min", i, 1.0 + i as f64)).collect();
        let mut bad = record("lasso.min", 5, f64::NAN);
        bad.error = Some("boom".into());
        recs.push(bad);
        let a = aggregate(&recs, 1.0);
        recs.reverse();
        recs.swap(0, 3);
        let b = aggregate(&recs, 1.0);
        assert_eq!(a, b);
        assert_eq!((a[0].replicates, a[0].excluded), (5, 1));
        assert_eq!(a[0].mse, 3.0);
        assert_eq!(a[0].selection_frequency, vec![0.6, 1.0]);
    }

    #[test]
    fn csv_round_trip_and_header() {
        let mut buf = Vec::new();
        write_summary_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), SUMMARY_HEADER.join(","));
        let rows = aggregate(&[record("lasso.1se", 0, 12.972), record("lasso.1se", 1, 1.0 / 3.0)], 13.715_f64.sqrt());
        let mut buf = Vec::new();
        write_summary_csv(&rows, &mut buf).unwrap();
        let back = read_summary_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 1);
        let (a, b) = (&rows[0], &back[0]);
        assert_eq!((a.mse, a.tp, a.fp, a.pct_dev, a.gi, a.over, a.oracle_mse), (b.mse, b.tp, b.fp, b.pct_dev, b.gi, b.over, b.oracle_mse));
        assert_eq!(gi_flag(b.mse, b.oracle_mse), b.gi);
    }

    #[test]
    fn markdown_shows_oracle_in_brackets() {
        let rows = aggregate(&[record("lasso.1se", 0, 12.972)], 13.715_f64.sqrt());
        let md = markdown_table(&rows);
        assert!(md.lines().next().unwrap().contains("(13.715)"));
        assert!(md.contains("**12.972**"));
    }

    #[test]
    fn runner_is_sorted_and_shares_datasets() {
        let spec = small_spec();
        let cfg = RunConfig {
            methods: vec!["lasso.min".into(), "scall".into()],
            modes: vec![StandardizationMode::Univariate, StandardizationMode::Raw],
            replicates: 3,
            base_seed: 11,
            tune: TuneConfig { folds: 5, n_lambda: 20, ..TuneConfig::default() },
        };
        let a = run_monte_carlo(&spec, &cfg, 1).unwrap();
        let b = run_monte_carlo(&spec, &cfg, 3).unwrap();
        assert_eq!(a.records.len(), 12);
        let key = |r: &MetricsRecord| (r.replicate, r.method, r.mode);
        assert!(a.records.windows(2).all(|w| key(&w[0]) < key(&w[1])));
        for rep in 0..3u64 {
            let sums: Vec<&String> = a.records.iter().filter(|r| r.replicate == rep).map(|r| &r.checksum).collect();
            assert!(sums.iter().all(|c| *c == &a.checksums[rep as usize]));
        }
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_records_csv(&a.records, a.sigma_eps.powi(2), &mut x).unwrap();
        write_records_csv(&b.records, b.sigma_eps.powi(2), &mut y).unwrap();
        assert_eq!(x, y);
    }
}
