//! Named invariant checks for every module, runnable at two scales.
//!
//! Exact identities are checked on seeded random instances; distributional
//! properties by Monte Carlo against closed forms, with tolerances in standard
//! errors. [`run_all`] is what `khmaladze verify` executes.

use std::sync::Arc;

use serde::Serialize;

use crate::discretization::{build_equiprobable_grid, cell_probabilities, counts_on_grid, GridSpec, PROB_FLOOR};
use crate::family::{Exponential, Normal, ParametricFamily, Uniform};
use crate::gof::{
    chi_squared_stat, draw_sample, ks_uniform, limit_model, mc_null_table, mc_statistics, run_test, two_sample_ks,
    NullModel, Statistic, TargetSpec, TestOptions,
};
use crate::kt1::{default_cutoff, kt1_predict, kt1_regressors, mle_discrete, Kt1State, Kt1Variant};
use crate::linalg::{diag, max_abs, max_abs_vec, weighted_dot, weighted_norm, Matrix, Vector};
use crate::mc::{accumulate_replicates, covariance_and_se, mean_and_se, run_replicates, MomentAccumulator};
use crate::multidim::{
    edge_defect, pillow_increments, rectangle_indicator, symmetrize_colour_blind, Grid2D, SymIndexMap,
};
use crate::operators::{
    accumulate, big_pi, embed_l, pi_hat_sqrt, pi_sqrt, reflection_u0, reflection_weighted, rotation_vk,
};
use crate::processes::{
    eval_functional, primal_rotation, project_increments, rotate_functional, simulate_bm_increments, DualFunction,
    TimeScale,
};
use crate::rng::{derive_seed, random_orthonormal_set, random_probabilities, random_unit_vector, ReplicateRng};
use crate::scores::{polynomial_scores, raw_scores_with, score_set, ScoreMethod, ScoreSet};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.to_string(), passed, detail }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub passed: bool,
    pub total: usize,
    pub failed: usize,
    pub checks: Vec<Check>,
}

impl Summary {
    pub fn new(checks: Vec<Check>) -> Self {
        let failed = checks.iter().filter(|c| !c.passed).count();
        Summary { passed: failed == 0, total: checks.len(), failed, checks }
    }
}

/// Sizes of the randomized and Monte-Carlo runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Random instances for exact identities.
    pub instances: u64,
    /// Replicates for process covariances.
    pub mc_reps: u64,
    /// Replicates for the chi-squared means.
    pub chisq_reps: u64,
    /// Replicates for the regression transform.
    pub kt1_reps: u64,
    /// Replicates per source for distribution-freeness and p-value uniformity.
    pub gof_reps: u64,
    /// Sample size in the goodness-of-fit runs.
    pub gof_n: u64,
    /// Size of the target-limit table used for p-values.
    pub table_reps: u64,
}

impl VerifyConfig {
    /// The sizes used by the acceptance suite.
    pub fn full(seed: u64) -> Self {
        VerifyConfig {
            seed,
            instances: 200,
            mc_reps: 100_000,
            chisq_reps: 10_000,
            kt1_reps: 10_000,
            gof_reps: 5000,
            gof_n: 2000,
            table_reps: 100_000,
        }
    }

    /// Smaller runs for the command-line `verify`.
    pub fn quick(seed: u64) -> Self {
        VerifyConfig {
            seed,
            instances: 60,
            mc_reps: 20_000,
            chisq_reps: 4000,
            kt1_reps: 4000,
            gof_reps: 1500,
            gof_n: 1000,
            table_reps: 20_000,
        }
    }
}

fn rng(cfg: &VerifyConfig, label: &str, index: u64) -> ReplicateRng {
    ReplicateRng::new(derive_seed(cfg.seed, label), index)
}

fn range(rng: &mut ReplicateRng, lo: usize, hi_inclusive: usize) -> usize {
    lo + (rng.next_u64() % (hi_inclusive - lo + 1) as u64) as usize
}

fn uniform_in(rng: &mut ReplicateRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

/// A random probability vector with `K + 1` orthonormal scores and a second
/// scale with its own scores, as used by the exact operator identities.
pub struct Instance {
    pub p: Vector,
    pub r: Vector,
    pub q: ScoreSet,
    pub s: ScoreSet,
}

pub fn random_instance(rng: &mut ReplicateRng, n: usize, k: usize) -> Instance {
    let p = random_probabilities(rng, n);
    let r = random_probabilities(rng, n);
    let q = ScoreSet::new(random_orthonormal_set(rng, &p, k), p.clone()).expect("orthonormal by construction");
    let s = ScoreSet::new(random_orthonormal_set(rng, &r, k), r.clone()).expect("orthonormal by construction");
    Instance { p, r, q, s }
}

fn instance_for(cfg: &VerifyConfig, label: &str, i: u64) -> Instance {
    let mut g = rng(cfg, label, i);
    let n = range(&mut g, 2, 50);
    let k = range(&mut g, 0, 4).min(n - 1);
    random_instance(&mut g, n, k)
}

fn family_for(rng: &mut ReplicateRng) -> (Arc<dyn ParametricFamily>, Vec<f64>) {
    match rng.next_u64() % 3 {
        0 => (Arc::new(Exponential::rate()), vec![uniform_in(rng, 0.2, 5.0)]),
        1 => (Arc::new(Normal::location(uniform_in(rng, 0.5, 3.0))), vec![uniform_in(rng, -2.0, 2.0)]),
        _ => (Arc::new(Normal::location_scale()), vec![uniform_in(rng, -2.0, 2.0), uniform_in(rng, 0.5, 3.0)]),
    }
}

// ---------------------------------------------------------------- discretization

pub fn discretization_checks(cfg: &VerifyConfig) -> Vec<Check> {
    let mut worst_sum: f64 = 0.0;
    let mut min_p = f64::INFINITY;
    let mut tested = 0;
    let mut partition_ok = true;
    let mut worst_equi: f64 = 0.0;
    for i in 0..cfg.instances {
        let mut g = rng(cfg, "discretization", i);
        let (fam, theta) = family_for(&mut g);
        let n = range(&mut g, 2, 50);
        // grid built at a perturbed parameter so cells are not equiprobable
        let shifted: Vec<f64> = theta.iter().map(|t| t * uniform_in(&mut g, 0.8, 1.2)).collect();
        let floor = fam.support_floor(&shifted).unwrap_or(-60.0);
        if let Ok(dist) = build_equiprobable_grid(fam.as_ref(), &shifted, n, floor) {
            if let Ok(p) = cell_probabilities(fam.as_ref(), &theta, dist.grid()) {
                tested += 1;
                worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
                min_p = min_p.min(p.iter().cloned().fold(f64::INFINITY, f64::min));
            }
            let size = range(&mut g, 1, 400) as u64;
            let sample = draw_sample(fam.as_ref(), &shifted, size, derive_seed(cfg.seed, "partition"), i);
            match counts_on_grid(&sample, dist.grid()) {
                Ok(c) => partition_ok &= c.sample_size() == size && c.counts().iter().sum::<u64>() == size,
                Err(_) => partition_ok = false,
            }
        }
        let equi: (Arc<dyn ParametricFamily>, Vec<f64>, f64) = match i % 3 {
            0 => (Arc::new(Exponential::rate()), vec![0.5 + 0.5 * (i % 7) as f64], 0.0),
            1 => (Arc::new(Normal::location_scale()), vec![0.3, 1.7], -60.0),
            _ => (Arc::new(Uniform { lower: -1.0, upper: 2.0 }), vec![], -1.0),
        };
        let dist = build_equiprobable_grid(equi.0.as_ref(), &equi.1, n, equi.2).expect("equiprobable grid");
        let p = cell_probabilities(equi.0.as_ref(), &equi.1, dist.grid()).expect("probabilities");
        worst_equi = worst_equi.max(p.iter().map(|v| (v - 1.0 / n as f64).abs()).fold(0.0, f64::max));
    }
    vec![
        Check::new(
            "discretization.probabilities_sum_to_one",
            tested > 0 && worst_sum <= 1e-12 && min_p >= PROB_FLOOR,
            format!("{tested} grids; max |Σp − 1| = {worst_sum:.2e}, min p = {min_p:.2e}"),
        ),
        Check::new(
            "discretization.partition_consistent",
            partition_ok,
            "every sampled point lands in exactly one cell".to_string(),
        ),
        Check::new(
            "discretization.equiprobable_grid",
            worst_equi <= 1e-9,
            format!("max |p_j − 1/N| = {worst_equi:.2e}"),
        ),
    ]
}

// ---------------------------------------------------------------- operators

/// Worst defects over the random instance set, one entry per identity.
#[derive(Debug, Clone, Default)]
pub struct OperatorDefects {
    pub pi_sqrt: f64,
    pub big_pi_idempotent: f64,
    pub big_pi_three_way: f64,
    pub reflection_involution: f64,
    pub reflection_isometry: f64,
    pub reflection_swap: f64,
    pub u0_conjugation: f64,
    pub vk_alignment: f64,
    pub vk_isometry: f64,
    pub norm_preservation: f64,
    pub rotated_covariance: f64,
}

pub fn operator_defects(cfg: &VerifyConfig) -> OperatorDefects {
    let per: Vec<OperatorDefects> = run_replicates(cfg.instances, |i| {
        let inst = instance_for(cfg, "operators", i);
        let mut g = rng(cfg, "operators-extra", i);
        let (p, r) = (&inst.p, &inst.r);
        let n = p.len();
        let eye = Matrix::identity(n, n);
        let dp = diag(p);
        let mut d = OperatorDefects::default();

        let ps = pi_sqrt(p).unwrap();
        let m = ps.matrix();
        let root = p.map(f64::sqrt);
        d.pi_sqrt = max_abs(&(m - m.transpose())).max(max_abs(&(m * m - m))).max(max_abs_vec(&(m * &root)));

        let pi = big_pi(p, &inst.q).unwrap();
        let pm = pi.matrix();
        d.big_pi_idempotent = max_abs(&(pm * pm - pm));
        let a = pm * &dp * pm.transpose();
        let b = pm * &dp;
        let c = &dp * pm.transpose();
        d.big_pi_three_way = max_abs(&(&a - &b)).max(max_abs(&(&b - &c)));

        let (xi, eta) = loop {
            let x = random_unit_vector(&mut g, p);
            let y = random_unit_vector(&mut g, p);
            if weighted_dot(&x, &y, p) <= 0.999 {
                break (x, y);
            }
        };
        let u = reflection_weighted(&xi, &eta, p).unwrap();
        let um = u.matrix();
        d.reflection_involution = max_abs(&(um * um - &eye));
        d.reflection_isometry = max_abs(&(um.transpose() * &dp * um - &dp));
        d.reflection_swap = max_abs_vec(&(um * &xi - &eta)).max(max_abs_vec(&(um * &eta - &xi)));

        let sr = r.map(f64::sqrt);
        let u0 = reflection_u0(&root, &sr).unwrap();
        let conj = u0.matrix() * ps.matrix() * u0.matrix();
        d.u0_conjugation = max_abs(&(conj - pi_sqrt(r).unwrap().matrix()));

        let vk = rotation_vk(&inst.q, &inst.s, p, r).unwrap();
        let l = embed_l(p, r).unwrap();
        let vm = vk.matrix();
        d.vk_alignment = inst
            .q
            .vectors()
            .iter()
            .zip(inst.s.vectors())
            .map(|(q, s)| max_abs_vec(&(vm * l.matrix() * s - q)))
            .fold(0.0, f64::max);
        d.vk_isometry = max_abs(&(vm.transpose() * &dp * vm - &dp));
        let psi = g.normal_vector(n);
        let image = vm * l.matrix() * &psi;
        d.norm_preservation =
            (weighted_norm(&image, p) - weighted_norm(&psi, r)).abs() / weighted_norm(&psi, r).max(1.0);

        let lhs = l.matrix() * vm.transpose() * pm * &dp * vm * l.matrix();
        let dr = diag(r);
        let mut rhs = dr.clone();
        for s in inst.s.vectors() {
            rhs -= &dr * s * s.transpose() * &dr;
        }
        d.rotated_covariance = max_abs(&(lhs - rhs));
        d
    });
    per.into_iter().fold(OperatorDefects::default(), |a, b| OperatorDefects {
        pi_sqrt: a.pi_sqrt.max(b.pi_sqrt),
        big_pi_idempotent: a.big_pi_idempotent.max(b.big_pi_idempotent),
        big_pi_three_way: a.big_pi_three_way.max(b.big_pi_three_way),
        reflection_involution: a.reflection_involution.max(b.reflection_involution),
        reflection_isometry: a.reflection_isometry.max(b.reflection_isometry),
        reflection_swap: a.reflection_swap.max(b.reflection_swap),
        u0_conjugation: a.u0_conjugation.max(b.u0_conjugation),
        vk_alignment: a.vk_alignment.max(b.vk_alignment),
        vk_isometry: a.vk_isometry.max(b.vk_isometry),
        norm_preservation: a.norm_preservation.max(b.norm_preservation),
        rotated_covariance: a.rotated_covariance.max(b.rotated_covariance),
    })
}

pub fn operator_checks(cfg: &VerifyConfig) -> Vec<Check> {
    let d = operator_defects(cfg);
    let n = cfg.instances;
    vec![
        Check::new("operators.pi_sqrt", d.pi_sqrt <= 1e-12, format!("{n} instances; max defect {:.2e}", d.pi_sqrt)),
        Check::new(
            "operators.reflection_weighted",
            d.reflection_involution.max(d.reflection_isometry).max(d.reflection_swap) <= 1e-10,
            format!(
                "U² − I {:.2e}, UᵀD_pU − D_p {:.2e}, swap {:.2e}",
                d.reflection_involution, d.reflection_isometry, d.reflection_swap
            ),
        ),
        Check::new(
            "operators.u0_conjugation",
            d.u0_conjugation <= 1e-10,
            format!("max defect {:.2e}", d.u0_conjugation),
        ),
        Check::new(
            "operators.big_pi_three_way",
            d.big_pi_idempotent.max(d.big_pi_three_way) <= 1e-10,
            format!("Π² − Π {:.2e}, three-way {:.2e}", d.big_pi_idempotent, d.big_pi_three_way),
        ),
        Check::new(
            "operators.rotation_vk",
            d.vk_alignment <= 1e-9 && d.vk_isometry <= 1e-10,
            format!("V L s_k − q_k {:.2e}, VᵀD_pV − D_p {:.2e}", d.vk_alignment, d.vk_isometry),
        ),
        Check::new(
            "operators.rotated_covariance",
            d.rotated_covariance <= 1e-9,
            format!("max defect {:.2e}", d.rotated_covariance),
        ),
    ]
}

// ---------------------------------------------------------------- scores

/// `θ = c ∘ θ'`: the same family under a componentwise rescaling.
struct Rescaled {
    inner: Arc<dyn ParametricFamily>,
    c: Vec<f64>,
}

impl Rescaled {
    fn map(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.c).map(|(t, c)| t * c).collect()
    }
}

impl ParametricFamily for Rescaled {
    fn name(&self) -> String {
        format!("rescaled-{}", self.inner.name())
    }
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn admits(&self, theta: &[f64]) -> bool {
        theta.len() == self.c.len() && self.inner.admits(&self.map(theta))
    }
    fn cdf(&self, theta: &[f64], x: f64) -> f64 {
        self.inner.cdf(&self.map(theta), x)
    }
    fn cdf_gradient(&self, theta: &[f64], x: f64) -> Option<Vec<f64>> {
        let g = self.inner.cdf_gradient(&self.map(theta), x)?;
        Some(g.iter().zip(&self.c).map(|(a, c)| a * c).collect())
    }
}

pub fn score_checks(cfg: &VerifyConfig) -> Vec<Check> {
    let mut worst_fd: f64 = 0.0;
    let mut worst_gram: f64 = 0.0;
    let mut worst_span: f64 = 0.0;
    let mut failures = Vec::new();
    for i in 0..cfg.instances {
        let mut g = rng(cfg, "scores", i);
        let (fam, theta) = family_for(&mut g);
        let n = range(&mut g, 3, 40);
        let floor = fam.support_floor(&theta).unwrap_or(-60.0);
        let grid = match build_equiprobable_grid(fam.as_ref(), &theta, n, floor) {
            Ok(d) => d.grid().clone(),
            Err(e) => {
                failures.push(e.to_string());
                continue;
            }
        };
        let analytic = raw_scores_with(fam.as_ref(), &theta, &grid, ScoreMethod::Analytic);
        let fd = raw_scores_with(fam.as_ref(), &theta, &grid, ScoreMethod::FiniteDifference);
        if let (Ok(a), Ok(f)) = (&analytic, &fd) {
            for (x, y) in a.iter().zip(f) {
                let scale = max_abs_vec(x).max(1.0);
                worst_fd = worst_fd.max(max_abs_vec(&(x - y)) / scale);
            }
        } else {
            failures.push(format!("{}: scores unavailable", fam.name()));
            continue;
        }
        let (p, set) = match score_set(fam.as_ref(), &theta, &grid) {
            Ok(v) => v,
            Err(e) => {
                failures.push(e.to_string());
                continue;
            }
        };
        let gram = crate::linalg::weighted_gram(set.vectors(), &p);
        worst_gram = worst_gram.max(max_abs(&(gram - Matrix::identity(set.k() + 1, set.k() + 1))));

        let c: Vec<f64> = (0..theta.len()).map(|_| uniform_in(&mut g, 0.1, 10.0)).collect();
        let re = Rescaled { inner: fam.clone(), c: c.clone() };
        let theta_re: Vec<f64> = theta.iter().zip(&c).map(|(t, c)| t / c).collect();
        match score_set(&re, &theta_re, &grid) {
            Ok((_, set_re)) => {
                worst_span = worst_span.max(max_abs(&(set.score_span_projector() - set_re.score_span_projector())))
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    let clean = failures.is_empty();
    vec![
        Check::new(
            "scores.analytic_matches_finite_difference",
            clean && worst_fd <= 1e-6,
            format!("max relative difference {worst_fd:.2e}; {} failures", failures.len()),
        ),
        Check::new(
            "scores.normalized_gram_is_identity",
            clean && worst_gram <= 1e-10,
            format!("max defect {worst_gram:.2e}"),
        ),
        Check::new(
            "scores.reparametrization_invariant_span",
            clean && worst_span <= 1e-9,
            format!("max projector difference {worst_span:.2e}"),
        ),
    ]
}

// ---------------------------------------------------------------- processes

fn within(est: f64, truth: f64, se: f64, k: f64) -> bool {
    (est - truth).abs() <= k * se
}

/// Largest `|estimate − truth| / SE` over the entries of a covariance matrix.
fn worst_z(est: &Matrix, truth: &Matrix, se: &Matrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..est.nrows() {
        for j in 0..est.ncols() {
            worst = worst.max((est[(i, j)] - truth[(i, j)]).abs() / se[(i, j)]);
        }
    }
    worst
}

/// Covariance and Gaussian standard errors of linear images `A x`.
fn transformed(acc: &MomentAccumulator, a: &Matrix) -> (Matrix, Matrix) {
    let c = a * acc.covariance() * a.transpose();
    let n = acc.count() as f64;
    let se = Matrix::from_fn(c.nrows(), c.ncols(), |i, j| ((c[(i, i)] * c[(j, j)] + c[(i, j)].powi(2)) / n).sqrt());
    (c, se)
}

/// Monte-Carlo covariance results for BM and bridge in time `P` on `N = 10` cells.
pub struct ProcessMc {
    pub bm_path_z: f64,
    pub bridge_path_z: f64,
    pub increment_variance_z: f64,
    pub functional_exact: f64,
    pub functional_z: f64,
    pub bm_terminal_z: f64,
    pub tie_down: f64,
}

pub fn process_mc(cfg: &VerifyConfig) -> ProcessMc {
    let n = 10;
    let mut g = rng(cfg, "process-mc", 0);
    let p = random_probabilities(&mut g, n);
    let ts = TimeScale::new(p.clone());
    let pi = big_pi(&p, &ScoreSet::constant(p.clone())).unwrap();
    let stream = derive_seed(cfg.seed, "process-mc-draws");
    let bm = accumulate_replicates(cfg.mc_reps, n, |rep| simulate_bm_increments(&ts, stream, rep).values);
    let bridge_stream = derive_seed(cfg.seed, "process-mc-bridge");
    let bridge = accumulate_replicates(cfg.mc_reps, n, |rep| {
        let dw = simulate_bm_increments(&ts, bridge_stream, rep);
        project_increments(&dw, &pi).unwrap().values
    });
    let tie_down = run_replicates(cfg.mc_reps.min(20_000), |rep| {
        let dw = simulate_bm_increments(&ts, bridge_stream, rep);
        accumulate(&project_increments(&dw, &pi).unwrap().values)[n - 1].abs()
    })
    .into_iter()
    .fold(0.0, f64::max);

    let j = crate::operators::accumulation_matrix(n).into_matrix();
    let cum = accumulate(&p);
    let bm_truth = Matrix::from_fn(n, n, |a, b| cum[a.min(b)]);
    let bridge_truth = Matrix::from_fn(n, n, |a, b| cum[a.min(b)] - cum[a] * cum[b]);

    let (bm_c, bm_se) = transformed(&bm, &j);
    // the bridge path is exactly 0 at the last cell; compare the free cells
    let (br_c, br_se) = transformed(&bridge, &j.rows(0, n - 1).into_owned());
    let bridge_truth = bridge_truth.view((0, 0), (n - 1, n - 1)).into_owned();

    // merged cells [a, b]
    let mut inc_z: f64 = 0.0;
    for a in 0..n {
        for b in a..n {
            let ind = Matrix::from_fn(1, n, |_, k| if k >= a && k <= b { 1.0 } else { 0.0 });
            let (c, se) = transformed(&bridge, &ind);
            let mass: f64 = p.rows(a, b - a + 1).sum();
            let truth = mass - mass * mass;
            if truth > 1e-12 {
                inc_z = inc_z.max((c[(0, 0)] - truth).abs() / se[(0, 0)]);
            }
        }
    }

    // v(φ), v(φ̃) for random test functions
    let mut functional_exact: f64 = 0.0;
    let mut functional_z: f64 = 0.0;
    let cov_exact = pi.matrix() * diag(&p) * pi.matrix().transpose();
    for t in 0..5 {
        let mut h = rng(cfg, "functionals", t);
        let phi = h.normal_vector(n);
        let psi = h.normal_vector(n);
        let exact = phi.dot(&(&cov_exact * &psi));
        let conventional = weighted_dot(&phi, &psi, &p) - phi.dot(&p) * psi.dot(&p);
        functional_exact = functional_exact.max((exact - conventional).abs());
        let a = Matrix::from_rows(&[phi.transpose(), psi.transpose()]);
        let (c, se) = transformed(&bridge, &a);
        functional_z = functional_z.max((c[(0, 1)] - conventional).abs() / se[(0, 1)]);
    }

    let (term, term_se) = transformed(&bm, &Matrix::from_element(1, n, 1.0));
    ProcessMc {
        bm_path_z: worst_z(&bm_c, &bm_truth, &bm_se),
        bridge_path_z: worst_z(&br_c, &bridge_truth, &br_se),
        increment_variance_z: inc_z,
        functional_exact,
        functional_z,
        bm_terminal_z: (term[(0, 0)] - 1.0).abs() / term_se[(0, 0)],
        tie_down,
    }
}

pub fn process_checks(cfg: &VerifyConfig) -> Vec<Check> {
    let mc = process_mc(cfg);
    let reps = cfg.mc_reps;
    let mut worst_dual: f64 = 0.0;
    let mut worst_norm: f64 = 0.0;
    let mut worst_consistency: f64 = 0.0;
    for i in 0..cfg.instances {
        let inst = instance_for(cfg, "processes", i);
        let n = inst.p.len();
        let mut g = rng(cfg, "processes-draw", i);
        let ts_p = TimeScale::new(inst.p.clone());
        let ts_r = TimeScale::new(inst.r.clone());
        let pi = big_pi(&inst.p, &inst.q).unwrap();
        let dw = simulate_bm_increments(&ts_p, derive_seed(cfg.seed, "processes-bm"), i);
        let dv = project_increments(&dw, &pi).unwrap();
        let phi = DualFunction::new(g.normal_vector(n), ts_p.clone()).unwrap();
        let lhs = eval_functional(&phi, &dv).unwrap();
        let pulled = DualFunction::new(pi.apply_transpose(&phi.values).unwrap(), ts_p).unwrap();
        let rhs = eval_functional(&pulled, &dw).unwrap();
        worst_dual = worst_dual.max((lhs - rhs).abs() / lhs.abs().max(1.0));

        let vk = rotation_vk(&inst.q, &inst.s, &inst.p, &inst.r).unwrap();
        let l = embed_l(&inst.p, &inst.r).unwrap();
        let psi = DualFunction::new(g.normal_vector(n), ts_r.clone()).unwrap();
        let image = vk.apply(&l.apply(&psi.values).unwrap()).unwrap();
        let np = weighted_norm(&image, &inst.p);
        worst_norm = worst_norm.max((np - psi.norm2().sqrt()).abs() / np.max(1.0));
        let a = rotate_functional(&psi, &vk, &l, &dv).unwrap();
        let b = eval_functional(&psi, &primal_rotation(&dv, &vk, &l, &ts_r).unwrap()).unwrap();
        worst_consistency = worst_consistency.max((a - b).abs() / a.abs().max(1.0));
    }
    vec![
        Check::new("processes.bridge_tie_down", mc.tie_down <= 1e-12, format!("max |v(∞)| = {:.2e}", mc.tie_down)),
        Check::new(
            "processes.dual_primal_consistency",
            worst_dual <= 1e-12 && worst_consistency <= 1e-12,
            format!("projection {worst_dual:.2e}, rotation {worst_consistency:.2e}"),
        ),
        Check::new(
            "processes.increment_variance_law",
            mc.increment_variance_z <= 4.0,
            format!("{reps} replicates; worst |Δ|/SE = {:.2}", mc.increment_variance_z),
        ),
        Check::new(
            "processes.functional_covariance",
            mc.functional_exact <= 1e-12 && mc.functional_z <= 4.0,
            format!("exact {:.2e}; MC worst |Δ|/SE = {:.2}", mc.functional_exact, mc.functional_z),
        ),
        Check::new(
            "processes.rotation_preserves_norms",
            worst_norm <= 1e-10,
            format!("max relative defect {worst_norm:.2e}"),
        ),
        Check::new(
            "processes.bm_path_covariance",
            mc.bm_path_z <= 4.0 && mc.bm_terminal_z <= 4.0,
            format!("worst |Δ|/SE = {:.2}; terminal variance {:.2} SE from 1", mc.bm_path_z, mc.bm_terminal_z),
        ),
        Check::new(
            "processes.bridge_path_covariance",
            mc.bridge_path_z <= 4.0,
            format!("worst |Δ|/SE = {:.2}", mc.bridge_path_z),
        ),
    ]
}

// ---------------------------------------------------------------- kt1

/// Monte-Carlo summary of the regression transform on exponential data,
/// `N = 10` equiprobable cells.
pub struct Kt1Mc {
    pub cutoff: usize,
    /// Worst `|mean(x₂*)| / SE` over `l ≤ cutoff`.
    pub centred_mean_z: f64,
    /// Worst `|Cov(x₁, x₂*)| / SE`.
    pub orthogonality_z: f64,
    /// Worst `|corr(residual, regressor)|` over non-degenerate regressors.
    pub residual_corr: f64,
    /// Worst `|Cov(path_k, path_l) − P(min)| / SE` over cells `1..cutoff`.
    pub innovation_cov_z: f64,
    /// Cells where the worst innovation covariance deviation occurs.
    pub innovation_worst_cells: (usize, usize),
    /// Worst `|Cov(path_k, path_l) − Σ_{j≤min} Var_j| / SE` over the same cells,
    /// against the exact per-cell innovation variances.
    pub discrete_kernel_z: f64,
    pub reps: u64,
    pub mle_failures: usize,
}

pub fn kt1_mc(cfg: &VerifyConfig, n: u64) -> Kt1Mc {
    let cells = 10;
    let fam = Exponential::rate();
    let theta = [1.0];
    let dist = build_equiprobable_grid(&fam, &theta, cells, 0.0).unwrap();
    let grid = dist.grid().clone();
    let truth = Kt1State::new(&fam, &theta, &grid).unwrap();
    let variant = Kt1Variant::Uncentred;
    let cutoff = default_cutoff(&truth, n, variant).unwrap();
    let stream = derive_seed(cfg.seed, "kt1");

    struct Rep {
        x1: Vec<f64>,
        x2_star: Vec<f64>,
        x2_hat: Vec<f64>,
        resid: Vec<f64>,
        path: Vec<f64>,
    }
    let reps: Vec<Option<Rep>> = run_replicates(cfg.kt1_reps, |rep| {
        let sample = draw_sample(&fam, &theta, n, stream, rep);
        let counts = counts_on_grid(&sample, &grid).ok()?;
        let th = mle_discrete(&counts, &fam, &grid, 1.0).ok()?;
        let state = Kt1State::new(&fam, &[th], &grid).ok()?;
        let mut r = Rep { x1: vec![], x2_star: vec![], x2_hat: vec![], resid: vec![], path: vec![] };
        let mut acc = 0.0;
        for l in 0..=cutoff {
            let (x1, _) = kt1_regressors(&counts, &truth.score, l).ok()?;
            r.x1.push(x1);
            r.x2_star.push(truth.centred_second_regressor(&counts, l).ok()?);
            let (_, x2h) = kt1_regressors(&counts, &state.score, l).ok()?;
            r.x2_hat.push(x2h);
            let pred = kt1_predict(&counts, &state, l, variant).ok()?;
            let y = counts.counts()[l] as f64 / n as f64;
            r.resid.push(y - pred);
            acc += (n as f64).sqrt() * (y - pred);
            r.path.push(acc);
        }
        Some(r)
    });
    let mle_failures = reps.iter().filter(|r| r.is_none()).count();
    let reps: Vec<Rep> = reps.into_iter().flatten().collect();
    let col = |f: &dyn Fn(&Rep) -> f64| -> Vec<f64> { reps.iter().map(f).collect() };

    let mut centred_mean_z: f64 = 0.0;
    let mut orthogonality_z: f64 = 0.0;
    let mut residual_corr: f64 = 0.0;
    for l in 0..=cutoff {
        let x1 = col(&|r| r.x1[l]);
        let x2s = col(&|r| r.x2_star[l]);
        let x2h = col(&|r| r.x2_hat[l]);
        let res = col(&|r| r.resid[l]);
        let (m, se) = mean_and_se(&x2s);
        if se > 0.0 {
            centred_mean_z = centred_mean_z.max(m.abs() / se);
        }
        let (c, se) = covariance_and_se(&x1, &x2s);
        if se > 0.0 {
            orthogonality_z = orthogonality_z.max(c.abs() / se);
        }
        for reg in [&x1, &x2h] {
            let (_, sd_se) = mean_and_se(reg);
            // x₁ is identically 1 and x₂(θ̂) identically 0 at the first cell
            if sd_se * (reg.len() as f64).sqrt() > 1e-9 {
                residual_corr = residual_corr.max(crate::mc::correlation(&res, reg).abs());
            }
        }
    }

    let cum = accumulate(&truth.probs);
    let kernel = accumulate(&Vector::from_iterator(
        cutoff + 1,
        (0..=cutoff).map(|l| truth.innovation_variance(l).unwrap_or(f64::NAN)),
    ));
    let mut innovation_cov_z: f64 = 0.0;
    let mut discrete_kernel_z: f64 = 0.0;
    let mut worst_cells = (0, 0);
    // interior: strictly between the first cell and the cutoff
    for a in 1..cutoff {
        for b in a..cutoff {
            let pa = col(&|r| r.path[a]);
            let pb = col(&|r| r.path[b]);
            let (c, se) = covariance_and_se(&pa, &pb);
            discrete_kernel_z = discrete_kernel_z.max((c - kernel[a]).abs() / se);
            let z = (c - cum[a]).abs() / se;
            if z > innovation_cov_z {
                innovation_cov_z = z;
                worst_cells = (a, b);
            }
        }
    }
    Kt1Mc {
        cutoff,
        centred_mean_z,
        orthogonality_z,
        residual_corr,
        innovation_cov_z,
        innovation_worst_cells: worst_cells,
        discrete_kernel_z,
        reps: reps.len() as u64,
        mle_failures,
    }
}

pub fn kt1_checks(cfg: &VerifyConfig) -> Vec<Check> {
    let mc = kt1_mc(cfg, 1000);
    let bound = 3.0 / (mc.reps as f64).sqrt();
    vec![
        Check::new(
            "kt1.centred_regressor_mean_zero",
            mc.centred_mean_z <= 3.0,
            format!("{} replicates, cells 0..={}; worst |mean|/SE = {:.2}", mc.reps, mc.cutoff, mc.centred_mean_z),
        ),
        Check::new(
            "kt1.regressor_orthogonality",
            mc.orthogonality_z <= 3.0,
            format!("worst |Cov(x₁, x₂*)|/SE = {:.2}", mc.orthogonality_z),
        ),
        Check::new(
            "kt1.residuals_uncorrelated",
            mc.residual_corr <= bound && mc.mle_failures == 0,
            format!(
                "worst |corr| = {:.4} (bound {bound:.4}); {} estimation failures",
                mc.residual_corr, mc.mle_failures
            ),
        ),
        Check::new(
            "kt1.innovation_covariance_discrete_kernel",
            mc.discrete_kernel_z <= 5.0,
            format!("cells 1..{}; worst |Δ|/SE = {:.2} against Σ p_j(1 − p_j κ_j)", mc.cutoff, mc.discrete_kernel_z),
        ),
    ]
}

// ---------------------------------------------------------------- multidim

fn grid_1d(p: &Vector) -> crate::discretization::DiscreteDistribution {
    crate::discretization::DiscreteDistribution::new(
        (0..p.len()).map(|i| i as f64).collect(),
        p.as_slice().to_vec(),
        0.0,
    )
    .expect("valid distribution")
}

/// Exact rotated-covariance identity on a flattened `3 × 3` independent grid,
/// rotating to the uniform law on nine cells with polynomial scores.
pub fn rotation_2d_defect(cfg: &VerifyConfig) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..cfg.instances.min(50) {
        let mut g = rng(cfg, "rotation-2d", i);
        let gx = grid_1d(&random_probabilities(&mut g, 3));
        let gy = grid_1d(&random_probabilities(&mut g, 3));
        let grid = Grid2D::independent(&gx, &gy).unwrap();
        let p = grid.flat_probs();
        let k = range(&mut g, 0, 4);
        let q = ScoreSet::new(random_orthonormal_set(&mut g, &p, k), p.clone()).unwrap();
        let r = Vector::from_element(9, 1.0 / 9.0);
        let s = polynomial_scores(&r, k).unwrap();
        let vk = rotation_vk(&q, &s, &p, &r).unwrap();
        let l = embed_l(&p, &r).unwrap();
        let pi = big_pi(&p, &q).unwrap();
        let lhs = l.matrix() * vk.matrix().transpose() * pi.matrix() * diag(&p) * vk.matrix() * l.matrix();
        let dr = diag(&r);
        let mut rhs = dr.clone();
        for sk in s.vectors() {
            rhs -= &dr * sk * sk.transpose() * &dr;
        }
        worst = worst.max(max_abs(&(lhs - rhs)));
    }
    worst
}

/// Mismatches between symmetrized indicators and the set-union oracle on
/// `4 × 4` grids, over every pair of thresholds drawn from (and around) the atoms.
pub fn symmetrization_mismatches(cfg: &VerifyConfig) -> (usize, usize) {
    let mut mismatches = 0;
    let mut cases = 0;
    for i in 0..cfg.instances.min(20) {
        let mut g = rng(cfg, "symmetrize", i);
        let mut atoms: Vec<f64> = (0..4).map(|_| uniform_in(&mut g, -3.0, 3.0)).collect();
        atoms.sort_by(f64::total_cmp);
        let p = random_probabilities(&mut g, 4);
        let d =
            crate::discretization::DiscreteDistribution::new(atoms.clone(), p.as_slice().to_vec(), atoms[0]).unwrap();
        let grid = Grid2D::independent(&d, &d).unwrap();
        let mut thresholds = atoms.clone();
        thresholds.extend([atoms[0] - 1.0, atoms[3] + 1.0, 0.5 * (atoms[1] + atoms[2])]);
        for &a in &thresholds {
            for &b in &thresholds {
                cases += 1;
                let s = symmetrize_colour_blind(a, b, &grid).unwrap().values;
                let swapped = symmetrize_colour_blind(b, a, &grid).unwrap().values;
                let mut ok = s == swapped;
                for x in 0..4 {
                    for y in 0..4 {
                        let (u, v) = (atoms[x], atoms[y]);
                        let union = (u <= a && v <= b) || (u <= b && v <= a);
                        ok &= (s[x * 4 + y] == 1.0) == union && s[x * 4 + y] == s[y * 4 + x];
                    }
                }
                let max_of =
                    rectangle_indicator(a, b, &grid).values.zip_map(&rectangle_indicator(b, a, &grid).values, f64::max);
                ok &= max_of == s;
                if !ok {
                    mismatches += 1;
                }
            }
        }
    }
    (mismatches, cases)
}

/// Worst edge value of the cumulative pillow over simulated replicates.
pub fn pillow_tie_down(cfg: &VerifyConfig, reps: u64) -> f64 {
    let stream = derive_seed(cfg.seed, "pillow");
    run_replicates(reps, |rep| {
        let mut g = ReplicateRng::new(stream, rep);
        let nx = range(&mut g, 2, 6);
        let ny = range(&mut g, 2, 6);
        let h = random_probabilities(&mut g, nx * ny);
        let probs = Matrix::from_fn(nx, ny, |i, j| h[i * ny + j]);
        let grid =
            Grid2D::new((0..nx).map(|i| i as f64).collect(), (0..ny).map(|j| j as f64).collect(), probs).unwrap();
        let dw = g.normal_vector(nx * ny).component_mul(&h.map(f64::sqrt));
        edge_defect(&pillow_increments(&dw, &grid).unwrap(), nx, ny).unwrap()
    })
    .into_iter()
    .fold(0.0, f64::max)
}

pub fn multidim_checks(cfg: &VerifyConfig) -> Vec<Check> {
    let mut map_ok = true;
    for n in 1..=50 {
        let map = SymIndexMap::new(n);
        let mut seen = vec![false; map.len()];
        for i in 0..n {
            for j in 0..n {
                let k = map.index(i, j).unwrap();
                map_ok &= k == map.index(j, i).unwrap() && map.pair(k).unwrap() == (i.min(j), i.max(j));
                seen[k] = true;
            }
        }
        map_ok &= seen.iter().all(|s| *s) && seen.len() == n * (n + 1) / 2;
    }
    let rot = rotation_2d_defect(cfg);
    let (mism, cases) = symmetrization_mismatches(cfg);
    let tie = pillow_tie_down(cfg, cfg.instances * 10);
    vec![
        Check::new("multidim.sym_index_map_bijective", map_ok, "N = 1..=50 round-trips with N(N+1)/2 images".into()),
        Check::new("multidim.rotation_2d_covariance", rot <= 1e-9, format!("3×3 grids; max defect {rot:.2e}")),
        Check::new(
            "multidim.symmetrize_swap_invariant",
            mism == 0,
            format!("{cases} threshold pairs; {mism} mismatches with the union oracle"),
        ),
        Check::new("multidim.pillow_tie_down", tie <= 1e-12, format!("max edge value {tie:.2e}")),
    ]
}

// ---------------------------------------------------------------- gof

/// Chi-squared means on exponential data (`N = 10`, `n = 2000`): known rate and
/// estimated rate. Returns `(mean, se)` for each.
pub fn chisq_means(cfg: &VerifyConfig) -> ((f64, f64), (f64, f64)) {
    let fam = Exponential::rate();
    let theta = [1.0];
    let grid = build_equiprobable_grid(&fam, &theta, 10, 0.0).unwrap().grid().clone();
    let p = Vector::from_vec(cell_probabilities(&fam, &theta, &grid).unwrap());
    let stream = derive_seed(cfg.seed, "chisq");
    let pairs: Vec<(f64, f64)> = run_replicates(cfg.chisq_reps, |rep| {
        let sample = draw_sample(&fam, &theta, 2000, stream, rep);
        let counts = counts_on_grid(&sample, &grid).unwrap();
        let known = chi_squared_stat(&counts, &p).unwrap();
        let th = mle_discrete(&counts, &fam, &grid, 1.0).unwrap();
        let ph = Vector::from_vec(cell_probabilities(&fam, &[th], &grid).unwrap());
        (known, chi_squared_stat(&counts, &ph).unwrap())
    });
    let known: Vec<f64> = pairs.iter().map(|x| x.0).collect();
    let est: Vec<f64> = pairs.iter().map(|x| x.1).collect();
    (mean_and_se(&known), mean_and_se(&est))
}

/// `E ‖π̂_{√p} Y‖² = N − K − 1` with `Y_j = (ν_j − n p_j)/√(n p_j)` at the true
/// parameter. Returns `(mean, se, N − K − 1)`.
pub fn projected_norm_mean(cfg: &VerifyConfig) -> (f64, f64, f64) {
    let fam = Exponential::rate();
    let theta = [1.0];
    let grid = build_equiprobable_grid(&fam, &theta, 10, 0.0).unwrap().grid().clone();
    let (p, set) = score_set(&fam, &theta, &grid).unwrap();
    let proj = pi_hat_sqrt(&p, &set).unwrap();
    let n = 2000.0;
    let stream = derive_seed(cfg.seed, "projected-norm");
    let vals: Vec<f64> = run_replicates(cfg.chisq_reps, |rep| {
        let sample = draw_sample(&fam, &theta, 2000, stream, rep);
        let counts = counts_on_grid(&sample, &grid).unwrap();
        let y = Vector::from_fn(10, |j, _| (counts.counts()[j] as f64 - n * p[j]) / (n * p[j]).sqrt());
        proj.apply(&y).unwrap().norm_squared()
    });
    let (m, se) = mean_and_se(&vals);
    (m, se, (10 - set.k() - 1) as f64)
}

/// Rotated KS statistics from two source families (exponential with estimated
/// rate, normal with estimated mean) rotated to the same uniform target.
/// Returns the two-sample KS `(distance, p_value)` and the failure count.
pub fn distribution_freeness(cfg: &VerifyConfig) -> ((f64, f64), usize) {
    let cells = 10;
    let spec = GridSpec::Equiprobable { cells, lower_bound: None };
    let exp: Arc<dyn ParametricFamily> = Arc::new(Exponential::rate());
    let norm: Arc<dyn ParametricFamily> = Arc::new(Normal::location(1.0));
    let mut samples = Vec::new();
    let mut failures = 0;
    for (label, fam, theta0) in [("exp", exp, vec![1.0]), ("normal", norm, vec![0.0])] {
        let grid = spec.resolve(fam.as_ref(), &theta0).unwrap();
        let model = NullModel::Sampled { family: fam, theta0, grid, n: cfg.gof_n, target: TargetSpec::Uniform };
        let res = mc_statistics(Statistic::Ks, &model, cfg.gof_reps, derive_seed(cfg.seed, label)).unwrap();
        failures += res.iter().filter(|r| r.is_err()).count();
        samples.push(res.into_iter().filter_map(|r| r.ok()).collect::<Vec<f64>>());
    }
    (two_sample_ks(&samples[0], &samples[1]).unwrap(), failures)
}

/// p-values of `run_test` on exponential data with estimated rate, tested
/// against the uniform law. Returns the one-sample KS `(distance, p_value)`.
pub fn p_value_uniformity(cfg: &VerifyConfig) -> (f64, f64) {
    let fam = Exponential::rate();
    let spec = GridSpec::Equiprobable { cells: 10, lower_bound: None };
    let table = Arc::new(
        mc_null_table(Statistic::Ks, &limit_model(TargetSpec::Uniform, 10, 1), cfg.table_reps, cfg.seed).unwrap(),
    );
    let opts = TestOptions { table: Some(table), seed: cfg.seed, reps: cfg.table_reps, ..TestOptions::default() };
    let stream = derive_seed(cfg.seed, "uniformity");
    let pv: Vec<f64> = run_replicates(cfg.gof_reps, |rep| {
        let sample = draw_sample(&fam, &[1.0], cfg.gof_n, stream, rep);
        run_test(&sample, &fam, &[1.0], &spec, &opts).map(|r| r.p_value).unwrap_or(f64::NAN)
    });
    ks_uniform(&pv).unwrap()
}

/// Runs `run_test` and table generation twice each and compares serialized bytes.
pub fn determinism(cfg: &VerifyConfig) -> bool {
    let fam = Exponential::rate();
    let spec = GridSpec::Equiprobable { cells: 8, lower_bound: None };
    let sample = draw_sample(&fam, &[1.0], 500, cfg.seed, 0);
    let opts = TestOptions { reps: 1000, seed: cfg.seed, ..TestOptions::default() };
    let a = serde_json::to_string(&run_test(&sample, &fam, &[1.0], &spec, &opts).unwrap()).unwrap();
    let b = serde_json::to_string(&run_test(&sample, &fam, &[1.0], &spec, &opts).unwrap()).unwrap();
    let model = limit_model(TargetSpec::Uniform, 8, 1);
    let t1 = mc_null_table(Statistic::Cvm, &model, 1000, cfg.seed).unwrap().to_text();
    let t2 = mc_null_table(Statistic::Cvm, &model, 1000, cfg.seed).unwrap().to_text();
    a == b && t1 == t2
}

pub fn gof_checks(cfg: &VerifyConfig) -> Vec<Check> {
    let ((km, kse), (em, ese)) = chisq_means(cfg);
    let (ym, yse, df) = projected_norm_mean(cfg);
    let ((d, pv), failures) = distribution_freeness(cfg);
    let (ud, up) = p_value_uniformity(cfg);
    vec![
        Check::new(
            "gof.chi_squared_mean",
            within(km, 9.0, kse, 3.0) && within(em, 8.0, ese, 3.0),
            format!("known θ: {km:.4} ± {kse:.4} (N−1 = 9); estimated θ: {em:.4} ± {ese:.4} (N−K−1 = 8)"),
        ),
        Check::new(
            "gof.projected_mean_check",
            within(ym, df, yse, 3.0),
            format!("mean ‖Ŷ‖² = {ym:.4} ± {yse:.4}, N−K−1 = {df}"),
        ),
        Check::new(
            "gof.distribution_freeness",
            pv >= 0.01 && failures == 0,
            format!("two-sample KS D = {d:.4}, p = {pv:.4}; {failures} failed replicates"),
        ),
        Check::new("gof.p_value_uniformity", up >= 0.01, format!("KS from uniform D = {ud:.4}, p = {up:.4}")),
    ]
}

pub fn cli_checks(cfg: &VerifyConfig) -> Vec<Check> {
    vec![Check::new("cli.determinism", determinism(cfg), "repeated test and table runs serialize identically".into())]
}

/// Every module's invariant suite.
pub fn run_all(cfg: &VerifyConfig) -> Summary {
    let mut checks = Vec::new();
    checks.extend(discretization_checks(cfg));
    checks.extend(operator_checks(cfg));
    checks.extend(score_checks(cfg));
    checks.extend(process_checks(cfg));
    checks.extend(kt1_checks(cfg));
    checks.extend(multidim_checks(cfg));
    checks.extend(gof_checks(cfg));
    checks.extend(cli_checks(cfg));
    Summary::new(checks)
}

/// Exact identities only; no Monte Carlo.
pub fn run_exact(cfg: &VerifyConfig) -> Summary {
    let mut checks = Vec::new();
    checks.extend(discretization_checks(cfg));
    checks.extend(operator_checks(cfg));
    checks.extend(score_checks(cfg));
    Summary::new(checks)
}
