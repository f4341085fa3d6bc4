//! `penlab` command-line front end.
//!
//! Exit codes: 0 success, 1 run failure, 2 configuration error.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use penlab::bench::{aggregate, markdown_table, run_monte_carlo, write_records_csv, write_summary_csv, RunConfig, RunManifest};
use penlab::methods::{Method, MethodId, Rule, TuneConfig, Tuner};
use penlab::numerics::{center_and_standardize, RngStream, StandardizationMode};
use penlab::pipeline::{load_csv, preprocess, real_data_evaluate, write_report_csv, PipelineConfig};
use penlab::scenario::{ScenarioName, ScenarioSpec};
use penlab::screening::{screen_rank, ScreenMethod};
use penlab::Error;

#[derive(Parser)]
#[command(name = "penlab", version, about = "Penalized regression laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo benchmark on a simulated scenario.
    Simulate(SimulateArgs),
    /// Tune one method on a CSV dataset and print the fit as JSON.
    Fit(FitArgs),
    /// Rank covariates by a marginal screening score.
    Screen(ScreenArgs),
    /// Real-data protocol: preprocessing, selection and repeated train/test scoring.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Modes {
    Raw,
    Univ,
    Both,
}

impl Modes {
    fn list(self) -> Vec<StandardizationMode> {
        match self {
            Modes::Raw => vec![StandardizationMode::Raw],
            Modes::Univ => vec![StandardizationMode::Univariate],
            Modes::Both => vec![StandardizationMode::Raw, StandardizationMode::Univariate],
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Raw,
    Univ,
}

impl From<Mode> for StandardizationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Raw => StandardizationMode::Raw,
            Mode::Univ => StandardizationMode::Univariate,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// IND, RC.IND, RNC.IND, UTOEP-B, UTOEP-S, RC.TOEP-S or RNC.TOEP-S.
    #[arg(long, required_unless_present = "manifest")]
    scenario: Option<String>,
    #[arg(long, default_value_t = 300)]
    n: usize,
    /// Toeplitz correlation (Toeplitz families only).
    #[arg(long)]
    rho: Option<f64>,
    /// Comma-separated method ids.
    #[arg(long, value_delimiter = ',', default_value = "lasso.min,lasso.1se,lasso.bic,adapl.min,adapl.1se,scad,dant,relaxl,sqrtl,scall,dc.vs")]
    methods: Vec<String>,
    #[arg(long, value_enum, default_value = "both")]
    modes: Modes,
    #[arg(long, default_value_t = 50)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tuning constants as JSON (missing fields take defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replay a previous run; scenario and run flags are taken from the manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Per-replicate CSV; summary CSV, markdown table and manifest are written beside it.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "PENLAB_THREADS", default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    response: String,
    /// Method name or full id, e.g. `lasso` or `lasso.1se`.
    #[arg(long)]
    method: String,
    /// min, 1se, bic or fixed; defaults to the method's usual rule.
    #[arg(long)]
    rule: Option<String>,
    #[arg(long, value_enum, default_value = "raw")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Screen {
    R2,
    Dc,
    Pls,
}

#[derive(Args)]
struct ScreenArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    response: String,
    #[arg(long, value_enum, default_value = "dc")]
    method: Screen,
    #[arg(long, value_enum, default_value = "raw")]
    mode: Mode,
    /// CSV destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, required_unless_present = "manifest")]
    data: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    response: Option<String>,
    /// PipelineConfig JSON (missing fields take defaults: shift 0.01, trim 0.05, train 0.8, 100 repetitions).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured repetitions.
    #[arg(long)]
    repetitions: Option<usize>,
    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Metrics CSV; provenance and manifest JSON are written beside it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "PENLAB_THREADS", default_value_t = 0)]
    threads: usize,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Run(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownScenario(_)
            | Error::InvalidParameter(_)
            | Error::Unsupported(_)
            | Error::MissingResponse(_)
            | Error::Json(_) => CliError::Config(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}{suffix}"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| CliError::Run(e.to_string()))?;
    writeln!(f)?;
    Ok(())
}

fn set_threads(threads: usize) -> CliResult<()> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Run(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let (spec, cfg) = match &a.manifest {
        Some(path) => {
            let m: RunManifest = read_json(path)?;
            (m.scenario, m.run)
        }
        None => {
            let name: ScenarioName = a.scenario.as_deref().unwrap_or_default().parse()?;
            let spec = ScenarioSpec::new(name, a.n, a.rho, a.seed)?;
            let tune = match &a.config {
                Some(p) => read_json(p)?,
                None => TuneConfig::default(),
            };
            let cfg = RunConfig { methods: a.methods.clone(), modes: a.modes.list(), replicates: a.replicates, base_seed: a.seed, tune };
            (spec, cfg)
        }
    };
    spec.validate()?;
    cfg.validate()?;
    let run = run_monte_carlo(&spec, &cfg, a.threads)?;
    let oracle = run.sigma_eps.powi(2);
    write_records_csv(&run.records, oracle, BufWriter::new(File::create(&a.out)?))?;
    let rows = aggregate(&run.records, run.sigma_eps);
    write_summary_csv(&rows, BufWriter::new(File::create(sibling(&a.out, ".summary.csv"))?))?;
    fs::write(sibling(&a.out, ".md"), markdown_table(&rows))?;
    write_json(&sibling(&a.out, ".manifest.json"), &RunManifest::from_run("simulate", &run, &cfg))?;
    for f in &run.failures {
        eprintln!("replicate {} {} {}: {}", f.replicate, f.method, f.mode.label(), f.error);
    }
    eprintln!("{} records, {} failures -> {}", run.records.len(), run.failures.len(), a.out.display());
    Ok(())
}

fn parse_method(method: &str, rule: Option<&str>) -> CliResult<MethodId> {
    match rule {
        None => Ok(MethodId::parse(method)?),
        Some(r) => {
            let m = Method::parse(method).ok_or_else(|| CliError::Config(format!("unknown method '{method}'")))?;
            let r = Rule::parse(r).ok_or_else(|| CliError::Config(format!("unknown rule '{r}' (valid: min, 1se, bic, fixed)")))?;
            Ok(MethodId::new(m, r)?)
        }
    }
}

fn output(out: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_fit(a: FitArgs) -> CliResult<()> {
    let id = parse_method(&a.method, a.rule.as_deref())?;
    let tune: TuneConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TuneConfig::default(),
    };
    tune.validate()?;
    let ds = load_csv(&a.data, &a.response)?;
    let (x, y) = (ds.x(), ds.y());
    let mode: StandardizationMode = a.mode.into();
    let sel = center_and_standardize(&x, &y, mode)?;
    let raw = center_and_standardize(&x, &y, StandardizationMode::Raw)?;
    let tuner = Tuner::new(sel.design.values(), raw.design.values(), &sel.response, &tune, RngStream::new(a.seed, 0))?;
    let o = tuner.run(id)?;
    let names = ds.covariate_names();
    let intercept = raw.response_mean - raw.column_means.iter().zip(&o.refit.beta).map(|(m, b)| m * b).sum::<f64>();
    let doc = json!({
        "method": id.to_string(),
        "mode": mode.label(),
        "n": ds.n(),
        "p": ds.p(),
        "lambda": o.fit.lambda,
        "support": o.fit.support.iter().map(|&j| names[j].clone()).collect::<Vec<_>>(),
        "intercept": intercept,
        "coefficients": o.refit.used.iter().map(|&j| json!({"name": names[j], "value": o.refit.beta[j]})).collect::<Vec<_>>(),
        "penalized": o.fit.support.iter().map(|&j| json!({"name": names[j], "value": o.fit.beta[j]})).collect::<Vec<_>>(),
        "refit_dropped": o.refit.dropped.iter().map(|&j| names[j].clone()).collect::<Vec<_>>(),
        "refit_truncated": o.refit.truncated,
        "converged": o.fit.converged,
        "diagnostics": o.diagnostics,
        "tuning": tune,
    });
    let mut w = output(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| CliError::Run(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

fn cmd_screen(a: ScreenArgs) -> CliResult<()> {
    let method = match a.method {
        Screen::R2 => ScreenMethod::R2,
        Screen::Dc => ScreenMethod::Dc,
        Screen::Pls => ScreenMethod::Pls,
    };
    let ds = load_csv(&a.data, &a.response)?;
    let std = center_and_standardize(&ds.x(), &ds.y(), a.mode.into())?;
    let ranking = screen_rank(std.design.values(), &std.response, method)?;
    let names = ds.covariate_names();
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    let run = |w: &mut csv::Writer<Box<dyn Write>>| -> csv::Result<()> {
        w.write_record(["rank", "column", "score", "method"])?;
        for (rank, &j) in ranking.order.iter().enumerate() {
            w.write_record([(rank + 1).to_string(), names[j].clone(), ranking.scores[j].to_string(), method.label().to_string()])?;
        }
        w.flush()?;
        Ok(())
    };
    run(&mut w).map_err(|e| CliError::Run(e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct PipelineManifest {
    command: String,
    version: String,
    data: PathBuf,
    response: String,
    config: PipelineConfig,
    dataset_rows: usize,
    removed_rows: Vec<usize>,
}

fn cmd_pipeline(a: PipelineArgs) -> CliResult<()> {
    let (data, response, mut cfg) = match &a.manifest {
        Some(p) => {
            let m: PipelineManifest = read_json(p)?;
            (m.data, m.response, m.config)
        }
        None => {
            let cfg: PipelineConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => PipelineConfig::default(),
            };
            (a.data.clone().unwrap_or_default(), a.response.clone().unwrap_or_default(), cfg)
        }
    };
    if let Some(r) = a.repetitions {
        cfg.repetitions = r;
    }
    if let Some(s) = a.seed {
        cfg.base_seed = s;
    }
    cfg.validate()?;
    set_threads(a.threads)?;
    let ds = load_csv(&data, &response)?;
    let (processed, prov) = preprocess(&ds, &cfg)?;
    let mut report = real_data_evaluate(&processed, &cfg)?;
    if let Some(stem) = data.file_stem() {
        report.dataset = stem.to_string_lossy().into_owned();
    }
    for r in &report.rows {
        if let Some(e) = &r.first_error {
            eprintln!("{}: {} of {} repetitions failed, first error: {e}", r.method, r.failures, cfg.repetitions);
        }
    }
    write_report_csv(&report, BufWriter::new(File::create(&a.out)?))?;
    write_json(&sibling(&a.out, ".provenance.json"), &prov)?;
    let manifest = PipelineManifest {
        command: "pipeline".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        data,
        response,
        config: cfg,
        dataset_rows: ds.n(),
        removed_rows: prov.removed_rows.clone(),
    };
    write_json(&sibling(&a.out, ".manifest.json"), &manifest)?;
    if report.rows.iter().all(|r| r.repetitions == 0) {
        return Err(CliError::Run("every method failed; see the messages above".into()));
    }
    eprintln!(
        "{} rows loaded ({} rejected), {} removed by trimming, {} methods -> {}",
        prov.n_loaded,
        prov.rejected_rows,
        prov.removed_rows.len(),
        report.rows.len(),
        a.out.display()
    );
    Ok(())
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Screen(a) => cmd_screen(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Config(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(CliError::Run(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
