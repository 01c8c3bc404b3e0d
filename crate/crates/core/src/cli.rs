//! Command-line surface.
//!
//! Exit codes: 0 success (a rejected null is still 0, the report carries the
//! decision), 1 usage error or failed `verify`, 2 I/O failure, 3 statistical
//! error with a JSON error object on stdout.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::discretization::{counts_on_grid, GridSpec};
use crate::family::{FamilySpec, ParametricFamily};
use crate::gof::{
    draw_sample, fit_mle, limit_model, mc_null_table, run_test, simulate_rotated_paths, write_atomic, NullModel,
    Statistic, TargetSpec, TestOptions, MIN_REPS,
};
use crate::kt1::{default_cutoff, kt1_innovations, Kt1State, Kt1Variant};
use crate::operators::accumulate;
use crate::rng::derive_seed;
use crate::verify::{run_all, VerifyConfig};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_STATISTICAL: i32 = 3;

pub const CACHE_ENV: &str = "GOF_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "khmaladze", version, about = "Distribution-free goodness-of-fit tests with estimated parameters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test a sample against a parametric family.
    Test(TestArgs),
    /// Generate a Monte-Carlo null table.
    Table(TableArgs),
    /// Write simulated process paths as CSV.
    Simulate(SimulateArgs),
    /// Run the invariant suites and write a pass/fail summary.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StatisticArg {
    Ks,
    Cvm,
    Chisq,
}

impl From<StatisticArg> for Statistic {
    fn from(s: StatisticArg) -> Self {
        match s {
            StatisticArg::Ks => Statistic::Ks,
            StatisticArg::Cvm => Statistic::Cvm,
            StatisticArg::Chisq => Statistic::Chisq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Uniform,
}

impl From<TargetArg> for TargetSpec {
    fn from(_: TargetArg) -> Self {
        TargetSpec::Uniform
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Uncentred,
    Centred,
}

impl From<VariantArg> for Kt1Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Uncentred => Kt1Variant::Uncentred,
            VariantArg::Centred => Kt1Variant::Centred,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProcessArg {
    /// Rotated empirical process (or its limit without `--n`).
    Rotated,
    /// Cumulative innovations of the regression transform (needs `--n`).
    Kt1,
}

#[derive(Debug, Clone, Args)]
pub struct FamilyArgs {
    /// exponential, exponential-fixed, normal, normal-location, normal-fixed, uniform.
    #[arg(long, default_value = "exponential")]
    pub family: String,
    /// Comma-separated starting or fixed parameter values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Number of equiprobable cells at the starting parameter.
    #[arg(long, conflicts_with_all = ["edges", "grid"])]
    pub cells: Option<usize>,
    /// Explicit left edges, comma-separated; the first is the support floor.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "grid")]
    pub edges: Option<Vec<f64>>,
    /// Grid JSON, inline or a path to a file.
    #[arg(long)]
    pub grid: Option<String>,
    /// Support floor for equiprobable grids.
    #[arg(long, allow_hyphen_values = true, requires = "cells")]
    pub lower_bound: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    /// CSV with one value per line and an optional header.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub family: FamilyArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value = "ks")]
    pub statistic: StatisticArg,
    #[arg(long, value_enum, default_value = "uniform")]
    pub target: TargetArg,
    #[arg(long, default_value_t = 5000)]
    pub reps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Tolerance of the score-orthogonality diagnostic.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TableArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value = "ks")]
    pub statistic: StatisticArg,
    #[arg(long, value_enum, default_value = "uniform")]
    pub target: TargetArg,
    #[arg(long, default_value_t = 5000)]
    pub reps: u64,
    #[arg(long)]
    pub seed: u64,
    /// Simulate finite samples of this size from the family instead of the target limit.
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value = "rotated")]
    pub process: ProcessArg,
    #[arg(long, value_enum, default_value = "uniform")]
    pub target: TargetArg,
    #[arg(long, default_value_t = 100)]
    pub reps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample size; without it the rotated process is simulated at its limit.
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long, value_enum, default_value = "uncentred")]
    pub kt1_variant: VariantArg,
    /// Last cell of the regression transform; defaults to the largest stable cell.
    #[arg(long)]
    pub cutoff: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Acceptance-scale replicate counts (slower).
    #[arg(long)]
    pub full: bool,
    /// Summary path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure of one command, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Io(String),
    Statistical(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(io) => Failure::Io(io.to_string()),
            other => Failure::Statistical(other),
        }
    }
}

#[derive(Serialize)]
struct ErrorObject<'a> {
    error: &'a str,
    message: String,
}

/// Parses `argv` (including the program name), executes and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            EXIT_IO
        }
        Err(Failure::Statistical(e)) => {
            let obj = ErrorObject { error: e.kind(), message: e.to_string() };
            println!("{}", serde_json::to_string(&obj).expect("error object serializes"));
            EXIT_STATISTICAL
        }
    }
}

pub fn execute(command: &Command) -> Result<i32, Failure> {
    match command {
        Command::Test(a) => cmd_test(a),
        Command::Table(a) => cmd_table(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
    }
}

fn build_family(f: &FamilyArgs) -> Result<(Arc<dyn ParametricFamily>, Vec<f64>), Failure> {
    FamilySpec::new(f.family.clone(), f.params.clone()).build().map_err(|e| Failure::Usage(e.to_string()))
}

pub fn grid_spec(g: &GridArgs) -> Result<GridSpec, Failure> {
    let spec = if let Some(cells) = g.cells {
        GridSpec::Equiprobable { cells, lower_bound: g.lower_bound }
    } else if let Some(edges) = &g.edges {
        GridSpec::Edges { edges: edges.clone() }
    } else if let Some(raw) = &g.grid {
        let text = if raw.trim_start().starts_with('{') {
            raw.clone()
        } else {
            std::fs::read_to_string(raw).map_err(|e| Failure::Io(format!("{raw}: {e}")))?
        };
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("grid JSON: {e}")))?
    } else {
        return Err(Failure::Usage("one of --cells, --edges or --grid is required".into()));
    };
    if spec.n_cells() < 2 {
        return Err(Failure::Usage(format!("a grid needs at least 2 cells, got {}", spec.n_cells())));
    }
    Ok(spec)
}

fn check_reps(reps: u64) -> Result<(), Failure> {
    if reps < MIN_REPS {
        return Err(Failure::Usage(format!("--reps must be at least {MIN_REPS}, got {reps}")));
    }
    Ok(())
}

/// One value per line; a first line that does not parse as a number is a header.
pub fn read_sample(path: &Path) -> Result<Vec<f64>, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Failure::Io(format!("{}: {e}", path.display())),
            _ => Failure::Statistical(Error::InvalidInput(format!("line {}: {e}", line + 1))),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 1 {
            return Err(Failure::Statistical(Error::InvalidInput(format!(
                "line {}: expected one value, found {}",
                line + 1,
                record.len()
            ))));
        }
        match record[0].parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            _ if line == 0 => continue,
            _ => {
                return Err(Failure::Statistical(Error::InvalidInput(format!(
                    "line {}: '{}' is not a finite number",
                    line + 1,
                    &record[0]
                ))))
            }
        }
    }
    Ok(values)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()).map_err(Failure::from),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Failure::Io(e.to_string()))
        }
    }
}

fn cmd_test(a: &TestArgs) -> Result<i32, Failure> {
    check_reps(a.reps)?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(Failure::Usage(format!("--alpha must lie in (0, 1), got {}", a.alpha)));
    }
    let spec = grid_spec(&a.grid)?;
    let (family, theta0) = build_family(&a.family)?;
    let sample = read_sample(&a.data)?;
    let options = TestOptions {
        statistic: a.statistic.into(),
        target: a.target.into(),
        reps: a.reps,
        seed: a.seed,
        alpha: a.alpha,
        tol: a.tol,
        cache_dir: std::env::var_os(CACHE_ENV).map(PathBuf::from),
        table: None,
    };
    let report = run_test(&sample, family.as_ref(), &theta0, &spec, &options)?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    emit(a.out.as_deref(), &text)?;
    Ok(EXIT_OK)
}

fn cmd_table(a: &TableArgs) -> Result<i32, Failure> {
    check_reps(a.reps)?;
    let spec = grid_spec(&a.grid)?;
    let (family, theta0) = build_family(&a.family)?;
    let model = match a.n {
        None => limit_model(a.target.into(), spec.n_cells(), family.param_dim()),
        Some(n) => {
            let grid = spec.resolve(family.as_ref(), &theta0)?;
            NullModel::Sampled { family, theta0, grid, n, target: a.target.into() }
        }
    };
    let table = mc_null_table(a.statistic.into(), &model, a.reps, a.seed)?;
    table.save(&a.out)?;
    Ok(EXIT_OK)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32, Failure> {
    if a.reps == 0 {
        return Err(Failure::Usage("--reps must be positive".into()));
    }
    let spec = grid_spec(&a.grid)?;
    let (family, theta0) = build_family(&a.family)?;
    let grid = spec.resolve(family.as_ref(), &theta0)?;
    let mut csv = String::from("cell_index,time,path_value,replicate\n");
    match a.process {
        ProcessArg::Rotated => {
            let (time, paths) = simulate_rotated_paths(family, &theta0, &grid, a.n, a.target.into(), a.reps, a.seed)?;
            for rep in 0..paths.nrows() {
                for j in 0..paths.ncols() {
                    let _ = writeln!(csv, "{j},{},{},{rep}", time[j], paths[(rep, j)]);
                }
            }
        }
        ProcessArg::Kt1 => {
            let n = a.n.ok_or_else(|| Failure::Usage("--process kt1 needs --n".into()))?;
            if family.param_dim() != 1 {
                return Err(Failure::Usage("the regression transform needs a one-parameter family".into()));
            }
            let variant: Kt1Variant = a.kt1_variant.into();
            let truth = Kt1State::new(family.as_ref(), &theta0, &grid)?;
            let cutoff = match a.cutoff {
                Some(c) => c,
                None => default_cutoff(&truth, n, variant)?,
            };
            let time = accumulate(&truth.probs);
            let stream = derive_seed(a.seed, "simulate-kt1");
            for rep in 0..a.reps {
                let sample = draw_sample(family.as_ref(), &theta0, n, stream, rep);
                let counts = counts_on_grid(&sample, &grid)?;
                let theta_hat = fit_mle(&counts, family.as_ref(), &theta0, &grid)?;
                let state = Kt1State::new(family.as_ref(), &theta_hat, &grid)?;
                let path = accumulate(&kt1_innovations(&counts, &state, cutoff, variant)?.values);
                for j in 0..=cutoff {
                    let _ = writeln!(csv, "{j},{},{},{rep}", time[j], path[j]);
                }
            }
        }
    }
    write_atomic(&a.out, csv.as_bytes())?;
    Ok(EXIT_OK)
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32, Failure> {
    let cfg = if a.full { VerifyConfig::full(a.seed) } else { VerifyConfig::quick(a.seed) };
    let summary = run_all(&cfg);
    for c in &summary.checks {
        eprintln!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    emit(a.out.as_deref(), &text)?;
    Ok(if summary.passed { EXIT_OK } else { EXIT_USAGE })
}
