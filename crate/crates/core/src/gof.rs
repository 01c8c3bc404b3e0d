//! Test statistics, Monte-Carlo null tables and the rotated goodness-of-fit test.
//!
//! The data are binned, the parameters estimated, and the empirical process is
//! rotated onto a parameter-free target (discrete uniform with synthetic
//! polynomial scores by default). The null table of the target therefore serves
//! every hypothesized family with the same number of cells and parameters.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discretization::{cell_probabilities, counts_on_grid, CellCounts, Grid, GridSpec};
use crate::error::{Error, Result};
use crate::family::ParametricFamily;
use crate::kt1::mle_discrete;
use crate::linalg::{max_abs_vec, Matrix, Vector};
use crate::mc::run_replicates;
use crate::operators::{big_pi, embed_l, rotation_vk, LinearOperator};
use crate::processes::{
    cumulative_path, empirical_increments, primal_rotation, project_increments, simulate_bm_increments,
    ProcessIncrements, TimeScale,
};
use crate::rng::{derive_seed, ReplicateRng};
use crate::scores::{information_matrix, normalize_scores, polynomial_scores, raw_scores, ScoreSet};

/// Smallest table size accepted for reported p-values.
pub const MIN_REPS: u64 = 1000;
/// Largest tolerated share of failed replicates in a null table.
pub const MAX_FAILURE_RATE: f64 = 0.01;
/// Expected cell count below which the report carries a small-sample warning.
pub const SMALL_EXPECTED_COUNT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    #[default]
    Ks,
    Cvm,
    Chisq,
}

impl Statistic {
    pub fn name(&self) -> &'static str {
        match self {
            Statistic::Ks => "ks",
            Statistic::Cvm => "cvm",
            Statistic::Chisq => "chisq",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ks" => Ok(Statistic::Ks),
            "cvm" => Ok(Statistic::Cvm),
            "chisq" => Ok(Statistic::Chisq),
            other => Err(Error::InvalidInput(format!("unknown statistic '{other}' (expected ks, cvm or chisq)"))),
        }
    }

    /// Evaluates the statistic on increments over their own time scale.
    pub fn evaluate(&self, dv: &ProcessIncrements) -> f64 {
        match self {
            Statistic::Ks => ks_stat(dv),
            Statistic::Cvm => cvm_stat(dv),
            Statistic::Chisq => dv.values.iter().zip(dv.scale.probs().iter()).map(|(v, p)| v * v / p).sum(),
        }
    }
}

/// Pearson's `Σ (ν_j − n p_j)² / (n p_j)`.
pub fn chi_squared_stat(counts: &CellCounts, p: &Vector) -> Result<f64> {
    if counts.n_cells() != p.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), actual: counts.n_cells() });
    }
    let n = counts.sample_size() as f64;
    if n == 0.0 {
        return Err(Error::EmptySample);
    }
    Ok(counts
        .counts()
        .iter()
        .zip(p.iter())
        .map(|(&c, &pj)| {
            let e = n * pj;
            (c as f64 - e).powi(2) / e
        })
        .sum())
}

/// `max_j |Σ_{k≤j} Δv_k|`.
pub fn ks_stat(dv: &ProcessIncrements) -> f64 {
    max_abs_vec(&cumulative_path(dv))
}

/// `Σ_j (Σ_{k≤j} Δv_k)² p_j` with `p` the increments' own scale.
pub fn cvm_stat(dv: &ProcessIncrements) -> f64 {
    cumulative_path(dv).iter().zip(dv.scale.probs().iter()).map(|(c, p)| c * c * p).sum()
}

/// Target distribution `R` with its synthetic score set.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub name: String,
    pub r: Vector,
    pub s: ScoreSet,
}

impl Target {
    pub fn time_scale(&self) -> TimeScale {
        TimeScale::new(self.r.clone())
    }
}

/// Which target to rotate to. Only the discrete uniform is provided; its `K`
/// score vectors are `D_r`-orthonormalized centred polynomials on the cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetSpec {
    #[default]
    Uniform,
}

impl TargetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TargetSpec::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(TargetSpec::Uniform),
            other => Err(Error::InvalidInput(format!("unknown target '{other}' (expected uniform)"))),
        }
    }

    pub fn build(&self, cells: usize, k: usize) -> Result<Target> {
        if k >= cells {
            return Err(Error::InvalidInput(format!("{k} parameters do not fit in {cells} cells")));
        }
        let r = Vector::from_element(cells, 1.0 / cells as f64);
        let s = polynomial_scores(&r, k)?;
        Ok(Target { name: self.name().to_string(), r, s })
    }
}

/// Maximum likelihood on the cells. `K = 1` uses the bracketed root finder,
/// larger `K` Fisher scoring with step halving.
pub fn fit_mle(counts: &CellCounts, family: &dyn ParametricFamily, theta0: &[f64], grid: &Grid) -> Result<Vec<f64>> {
    match family.param_dim() {
        0 => Ok(Vec::new()),
        1 => Ok(vec![mle_discrete(counts, family, grid, theta0[0])?]),
        _ => fisher_scoring(counts, family, theta0, grid),
    }
}

fn log_likelihood(nu: &[f64], family: &dyn ParametricFamily, theta: &[f64], grid: &Grid) -> Option<f64> {
    if !family.admits(theta) {
        return None;
    }
    let p = cell_probabilities(family, theta, grid).ok()?;
    Some(nu.iter().zip(&p).filter(|(v, _)| **v > 0.0).map(|(v, pj)| v * pj.ln()).sum())
}

fn fisher_scoring(counts: &CellCounts, family: &dyn ParametricFamily, theta0: &[f64], grid: &Grid) -> Result<Vec<f64>> {
    let k = family.param_dim();
    let n = counts.sample_size() as f64;
    if n == 0.0 {
        return Err(Error::EmptySample);
    }
    let nu = counts.as_f64();
    let mut theta = theta0.to_vec();
    let mut ll = log_likelihood(&nu, family, &theta, grid)
        .ok_or_else(|| Error::MleNotFound("start value is not admissible".into()))?;
    for _ in 0..200 {
        let p = Vector::from_vec(cell_probabilities(family, &theta, grid)?);
        let q = raw_scores(family, &theta, grid)?;
        let grad = Vector::from_fn(k, |a, _| q[a].iter().zip(&nu).map(|(x, v)| x * v).sum::<f64>() / n);
        if max_abs_vec(&grad) <= 1e-11 {
            return Ok(theta);
        }
        let gamma = information_matrix(&q, &p).map_err(|e| Error::MleNotFound(e.to_string()))?;
        let step = gamma
            .matrix()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::MleNotFound("information matrix not positive definite".into()))?
            .solve(&grad);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            match log_likelihood(&nu, family, &cand, grid) {
                Some(v) if v >= ll - 1e-12 * ll.abs() => {
                    theta = cand;
                    ll = v;
                    break;
                }
                _ => {
                    t *= 0.5;
                    if t < 1e-12 {
                        return Err(Error::MleNotFound("no ascent direction from the current estimate".into()));
                    }
                }
            }
        }
    }
    Err(Error::MleNotFound("Fisher scoring did not converge".into()))
}

/// Everything computed while rotating one sample to the target.
#[derive(Debug, Clone)]
pub struct RotatedSample {
    pub theta_hat: Vec<f64>,
    pub p_hat: Vector,
    pub scores: ScoreSet,
    pub native: ProcessIncrements,
    pub rotated: ProcessIncrements,
    pub vk: LinearOperator,
}

/// Bins nothing; takes counts on `grid`, estimates `θ`, and rotates the
/// empirical process at `θ̂` onto `target`.
pub fn rotate_sample(
    counts: &CellCounts,
    family: &dyn ParametricFamily,
    theta0: &[f64],
    grid: &Grid,
    target: &Target,
) -> Result<RotatedSample> {
    let theta_hat = fit_mle(counts, family, theta0, grid)?;
    let p_hat = Vector::from_vec(cell_probabilities(family, &theta_hat, grid)?);
    let scores = if family.param_dim() == 0 {
        ScoreSet::constant(p_hat.clone())
    } else {
        let q = raw_scores(family, &theta_hat, grid)?;
        let gamma = information_matrix(&q, &p_hat)?;
        normalize_scores(&q, &gamma, &p_hat)?
    };
    if scores.k() != target.s.k() || target.r.len() != p_hat.len() {
        return Err(Error::InvalidInput("target does not match the model's cells and parameters".into()));
    }
    let native = empirical_increments(counts, &TimeScale::new(p_hat.clone()))?;
    let vk = rotation_vk(&scores, &target.s, &p_hat, &target.r)?;
    let l = embed_l(&p_hat, &target.r)?;
    let rotated = primal_rotation(&native, &vk, &l, &target.time_scale())?;
    Ok(RotatedSample { theta_hat, p_hat, scores, native, rotated, vk })
}

/// How null replicates are generated.
#[derive(Clone)]
pub enum NullModel {
    /// Projected Brownian motion over the target itself: the large-sample limit
    /// of the rotated process, free of the source family.
    TargetLimit { target: TargetSpec, cells: usize, k: usize },
    /// Finite samples of size `n` from `family` at `theta0`, binned on `grid`,
    /// estimated and rotated to the target.
    Sampled { family: Arc<dyn ParametricFamily>, theta0: Vec<f64>, grid: Grid, n: u64, target: TargetSpec },
}

impl std::fmt::Debug for NullModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.description())
    }
}

impl NullModel {
    /// Stable one-line description; hashed into cache keys.
    pub fn description(&self) -> String {
        match self {
            NullModel::TargetLimit { target, cells, k } => {
                format!("target-limit target={} cells={cells} k={k}", target.name())
            }
            NullModel::Sampled { family, theta0, grid, n, target } => {
                let mut s =
                    format!("sampled family={} theta0={theta0:?} n={n} target={} edges=", family.name(), target.name());
                for (i, a) in grid.atoms().iter().enumerate() {
                    let _ = write!(s, "{}{a}", if i == 0 { "" } else { "," });
                }
                s
            }
        }
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.description().as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Sorted Monte-Carlo sample of a statistic under a null model.
#[derive(Debug, Clone, PartialEq)]
pub struct NullTable {
    pub statistic: Statistic,
    pub values: Vec<f64>,
    pub seed: u64,
    pub model: String,
    pub model_hash: String,
    pub failures: usize,
}

impl NullTable {
    pub fn reps(&self) -> usize {
        self.values.len()
    }

    /// `(1 + #{table ≥ observed}) / (reps + 1)`.
    pub fn p_value(&self, observed: f64) -> f64 {
        let below = self.values.partition_point(|v| *v < observed);
        let at_or_above = self.values.len() - below;
        (1 + at_or_above) as f64 / (self.values.len() + 1) as f64
    }

    /// Empirical quantile by the nearest-rank rule.
    pub fn quantile(&self, prob: f64) -> f64 {
        let n = self.values.len();
        let idx = ((prob * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.values[idx]
    }

    pub fn write_to(&self, out: &mut impl io::Write) -> io::Result<()> {
        writeln!(out, "# statistic: {}", self.statistic.name())?;
        writeln!(out, "# reps: {}", self.values.len())?;
        writeln!(out, "# seed: {}", self.seed)?;
        writeln!(out, "# model: {}", self.model)?;
        writeln!(out, "# model_hash: {}", self.model_hash)?;
        writeln!(out, "# failures: {}", self.failures)?;
        for v in &self.values {
            writeln!(out, "{v}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut statistic = None;
        let mut reps = None;
        let mut seed = None;
        let mut model = String::new();
        let mut model_hash = String::new();
        let mut failures = 0;
        let mut values = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::InvalidInput(format!("null table line {}: {what}", lineno + 1));
            if let Some(header) = line.strip_prefix('#') {
                let (key, value) = header.split_once(':').ok_or_else(|| bad("header without ':'"))?;
                let value = value.trim();
                match key.trim() {
                    "statistic" => statistic = Some(Statistic::parse(value)?),
                    "reps" => reps = Some(value.parse::<usize>().map_err(|_| bad("reps"))?),
                    "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad("seed"))?),
                    "model" => model = value.to_string(),
                    "model_hash" => model_hash = value.to_string(),
                    "failures" => failures = value.parse().map_err(|_| bad("failures"))?,
                    _ => {}
                }
            } else {
                values.push(line.parse::<f64>().map_err(|_| bad("not a number"))?);
            }
        }
        let statistic = statistic.ok_or_else(|| Error::InvalidInput("null table lacks a statistic header".into()))?;
        if let Some(r) = reps {
            if r != values.len() {
                return Err(Error::InvalidInput(format!("null table declares {r} values but holds {}", values.len())));
            }
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidInput("null table values are not sorted".into()));
        }
        Ok(NullTable { statistic, values, seed: seed.unwrap_or(0), model, model_hash, failures })
    }

    pub fn load(path: &Path) -> Result<Self> {
        NullTable::read_from(io::BufReader::new(fs::File::open(path)?))
    }

    /// Writes through a temporary file in the same directory and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

/// Write-then-rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let file_name =
        path.file_name().ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Draws `n` observations from `family` at `theta` on replicate stream `rep`.
pub fn draw_sample(family: &dyn ParametricFamily, theta: &[f64], n: u64, seed: u64, rep: u64) -> Vec<f64> {
    let mut rng = ReplicateRng::new(seed, rep);
    (0..n).map(|_| family.sample(theta, rng.uniform())).collect()
}

/// Per-replicate closure for a null model, with the target-side work hoisted.
fn replicate_fn(
    statistic: Statistic,
    model: &NullModel,
    seed: u64,
) -> Result<Box<dyn Fn(u64) -> Result<f64> + Sync + Send + '_>> {
    match model {
        NullModel::TargetLimit { target, cells, k } => {
            let t = target.build(*cells, *k)?;
            let pi = big_pi(&t.r, &t.s)?;
            let ts = t.time_scale();
            let stream = derive_seed(seed, "null-limit");
            Ok(Box::new(move |rep| {
                let dw = simulate_bm_increments(&ts, stream, rep);
                Ok(statistic.evaluate(&project_increments(&dw, &pi)?))
            }))
        }
        NullModel::Sampled { family, theta0, grid, n, target } => {
            let t = target.build(grid.n_cells(), family.param_dim())?;
            let stream = derive_seed(seed, "null-sample");
            Ok(Box::new(move |rep| {
                let sample = draw_sample(family.as_ref(), theta0, *n, stream, rep);
                let counts = counts_on_grid(&sample, grid)?;
                let rotated = rotate_sample(&counts, family.as_ref(), theta0, grid, &t)?;
                Ok(statistic.evaluate(&rotated.rotated))
            }))
        }
    }
}

/// Raw, unsorted replicate results in replicate order.
pub fn mc_statistics(statistic: Statistic, model: &NullModel, reps: u64, seed: u64) -> Result<Vec<Result<f64>>> {
    let f = replicate_fn(statistic, model, seed)?;
    Ok(run_replicates(reps, f))
}

pub fn mc_null_table(statistic: Statistic, model: &NullModel, reps: u64, seed: u64) -> Result<NullTable> {
    if reps < MIN_REPS {
        return Err(Error::InvalidInput(format!("null tables need at least {MIN_REPS} replicates, got {reps}")));
    }
    let results = mc_statistics(statistic, model, reps, seed)?;
    let failures = results.iter().filter(|r| r.is_err()).count();
    if failures as f64 > MAX_FAILURE_RATE * reps as f64 {
        return Err(Error::TableUnreliable { failures, reps: reps as usize });
    }
    let mut values: Vec<f64> = results.into_iter().filter_map(|r| r.ok()).collect();
    values.sort_by(f64::total_cmp);
    Ok(NullTable { statistic, values, seed, model: model.description(), model_hash: model.hash(), failures })
}

/// Cache file for `(statistic, model, reps, seed)` under `dir`.
pub fn cache_path(dir: &Path, statistic: Statistic, model: &NullModel, reps: u64, seed: u64) -> PathBuf {
    let key = format!("{}|{}|{reps}|{seed}", statistic.name(), model.description());
    let digest = hex(&Sha256::digest(key.as_bytes()));
    dir.join(format!("null-{}-{}.txt", statistic.name(), &digest[..32]))
}

/// Loads the table from `cache_dir` when present and consistent, else generates
/// and stores it.
pub fn cached_null_table(
    statistic: Statistic,
    model: &NullModel,
    reps: u64,
    seed: u64,
    cache_dir: Option<&Path>,
) -> Result<NullTable> {
    let Some(dir) = cache_dir else {
        return mc_null_table(statistic, model, reps, seed);
    };
    let path = cache_path(dir, statistic, model, reps, seed);
    if let Ok(t) = NullTable::load(&path) {
        if t.statistic == statistic
            && t.seed == seed
            && t.model_hash == model.hash()
            && t.reps() + t.failures == reps as usize
        {
            return Ok(t);
        }
    }
    let table = mc_null_table(statistic, model, reps, seed)?;
    fs::create_dir_all(dir)?;
    table.save(&path)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Diagnostic {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Diagnostic { name: name.to_string(), passed, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic_name: String,
    pub statistic_value: f64,
    pub p_value: f64,
    pub theta_hat: Option<Vec<f64>>,
    pub n: u64,
    pub cells: usize,
    pub target: String,
    pub replicates: u64,
    pub seed: u64,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone)]
pub struct TestOptions {
    pub statistic: Statistic,
    pub target: TargetSpec,
    pub reps: u64,
    pub seed: u64,
    pub alpha: f64,
    /// Bound on `|q_kᵀ Δv|` in the score-orthogonality diagnostic.
    pub tol: f64,
    pub cache_dir: Option<PathBuf>,
    /// Use this table instead of simulating one.
    pub table: Option<Arc<NullTable>>,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            statistic: Statistic::Ks,
            target: TargetSpec::Uniform,
            reps: 5000,
            seed: 0,
            alpha: 0.05,
            tol: 1e-6,
            cache_dir: None,
            table: None,
        }
    }
}

/// The null model whose table a test with these settings refers to.
pub fn limit_model(target: TargetSpec, cells: usize, k: usize) -> NullModel {
    NullModel::TargetLimit { target, cells, k }
}

/// Bins the sample, estimates `θ`, rotates to the target and reads the p-value
/// off the target's null table.
pub fn run_test(
    sample: &[f64],
    family: &dyn ParametricFamily,
    theta0: &[f64],
    grid_spec: &GridSpec,
    options: &TestOptions,
) -> Result<TestReport> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let grid = grid_spec.resolve(family, theta0)?;
    let counts = counts_on_grid(sample, &grid)?;
    let k = family.param_dim();
    let target = options.target.build(grid.n_cells(), k)?;
    let rotated = rotate_sample(&counts, family, theta0, &grid, &target)?;
    let observed = options.statistic.evaluate(&rotated.rotated);

    let table = match &options.table {
        Some(t) => {
            if t.statistic != options.statistic {
                return Err(Error::InvalidInput("supplied null table is for a different statistic".into()));
            }
            t.clone()
        }
        None => {
            let model = limit_model(options.target, grid.n_cells(), k);
            Arc::new(cached_null_table(
                options.statistic,
                &model,
                options.reps,
                options.seed,
                options.cache_dir.as_deref(),
            )?)
        }
    };
    let p_value = table.p_value(observed);

    let n = counts.sample_size();
    let mut diagnostics = Vec::new();
    let min_expected = rotated.p_hat.min() * n as f64;
    diagnostics.push(Diagnostic::new(
        "small_sample",
        min_expected >= SMALL_EXPECTED_COUNT,
        format!("smallest expected cell count {min_expected:.3}"),
    ));
    let annihilation = rotated.scores.vectors().iter().map(|q| q.dot(&rotated.native.values).abs()).fold(0.0, f64::max);
    diagnostics.push(Diagnostic::new(
        "score_orthogonality",
        annihilation <= options.tol,
        format!("max |q_kᵀ Δv| = {annihilation:.3e}"),
    ));
    let isometry = rotated.vk.invariant_defect();
    diagnostics.push(Diagnostic::new(
        "rotation_isometry",
        isometry <= 1e-9,
        format!("max |VᵀD_pV − D_p| = {isometry:.3e}"),
    ));
    diagnostics.push(Diagnostic::new(
        "table_size",
        table.reps() as u64 >= MIN_REPS,
        format!("{} replicates, {} failed", table.reps(), table.failures),
    ));
    diagnostics.push(Diagnostic::new(
        "reject_at_alpha",
        p_value >= options.alpha,
        format!("alpha = {}, p = {p_value:.6}; passed = false means the null is rejected", options.alpha),
    ));

    Ok(TestReport {
        statistic_name: options.statistic.name().to_string(),
        statistic_value: observed,
        p_value,
        theta_hat: if k == 0 { None } else { Some(rotated.theta_hat) },
        n,
        cells: grid.n_cells(),
        target: target.name,
        replicates: table.reps() as u64,
        seed: options.seed,
        diagnostics,
    })
}

/// Cumulative paths of rotated processes: one row per replicate, plus the
/// target's cumulative time. `n = None` simulates the target limit.
pub fn simulate_rotated_paths(
    family: Arc<dyn ParametricFamily>,
    theta0: &[f64],
    grid: &Grid,
    n: Option<u64>,
    target: TargetSpec,
    reps: u64,
    seed: u64,
) -> Result<(Vector, Matrix)> {
    let cells = grid.n_cells();
    let k = family.param_dim();
    let t = target.build(cells, k)?;
    let time = crate::operators::accumulate(&t.r);
    let rows: Vec<Result<Vector>> = match n {
        None => {
            let pi = big_pi(&t.r, &t.s)?;
            let ts = t.time_scale();
            let stream = derive_seed(seed, "simulate-limit");
            run_replicates(reps, |rep| {
                let dw = simulate_bm_increments(&ts, stream, rep);
                Ok(cumulative_path(&project_increments(&dw, &pi)?))
            })
        }
        Some(n) => {
            let stream = derive_seed(seed, "simulate-sample");
            run_replicates(reps, |rep| {
                let sample = draw_sample(family.as_ref(), theta0, n, stream, rep);
                let counts = counts_on_grid(&sample, grid)?;
                Ok(cumulative_path(&rotate_sample(&counts, family.as_ref(), theta0, grid, &t)?.rotated))
            })
        }
    };
    let mut paths = Matrix::zeros(reps as usize, cells);
    for (i, row) in rows.into_iter().enumerate() {
        paths.set_row(i, &row?.transpose());
    }
    Ok((time, paths))
}

/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`, the Kolmogorov tail probability.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov–Smirnov distance and its asymptotic p-value with the
/// usual small-sample correction of `λ`.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    Ok((d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d)))
}

/// One-sample KS distance from the uniform law on `[0, 1]` and its asymptotic
/// p-value.
pub fn ks_uniform(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::EmptySample);
    }
    let v = sorted(xs);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let ne = n.sqrt();
    Ok((d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d)))
}
