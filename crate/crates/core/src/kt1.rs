//! The first transform as a regression on the future.
//!
//! For cell `l` the regressand is the cell's share of deaths `ν_l/n`; the
//! regressors are the survivors `x₁ = (1/n) Σ_{j≥l} ν_j` and their summed score
//! `x₂ = (1/n) Σ_{j≥l} Q_{1j}(θ̂) ν_j`. Integrals over the tail become tail sums
//! over cells and `h(x_l, θ)` is the cell score `Q_{1l}(θ)`.
//!
//! Cell indices are 0-based throughout.

use serde::{Deserialize, Serialize};

use crate::discretization::{cell_probabilities, CellCounts, Grid, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::family::ParametricFamily;
use crate::linalg::Vector;
use crate::processes::{ProcessIncrements, ProcessKind, TimeScale};
use crate::scores::raw_scores;

/// Determinant below which the 2×2 regression matrix is treated as singular.
pub const SINGULAR_DET: f64 = 1e-14;
/// Minimum expected number of survivors for the default cutoff.
pub const MIN_TAIL_COUNT: f64 = 5.0;

const MLE_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kt1Variant {
    /// `p_l [x₁, x₂] M⁻¹ [1, h_l]ᵀ` with the uncentred second-moment matrix `M`.
    #[default]
    Uncentred,
    /// `p_l [x₁, x₂] C⁻¹ [F, h_l − T]ᵀ` with the regressor covariance `C`.
    Centred,
}

/// Tail sums of a `K = 1` model at a fixed parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Kt1State {
    pub theta_hat: Vec<f64>,
    pub probs: Vector,
    /// `Q_{1j}`: the unnormalized cell score.
    pub score: Vector,
    /// `Σ_{j≥l} p_j`.
    pub tail_mass: Vector,
    /// `Σ_{j<l} p_j`, i.e. `F_θ` at the start of cell `l`.
    pub head_mass: Vector,
    /// `Σ_{j≥l} Q_{1j} p_j`.
    pub tail_score: Vector,
    /// `Σ_{j≥l} Q_{1j}² p_j`.
    pub tail_score_sq: Vector,
    /// `E_θ^t = tail_score / tail_mass`.
    pub cond_mean: Vector,
}

impl Kt1State {
    pub fn new(family: &dyn ParametricFamily, theta: &[f64], grid: &Grid) -> Result<Self> {
        if family.param_dim() != 1 {
            return Err(Error::InvalidFamily(format!(
                "the regression transform supports one parameter, {} has {}",
                family.name(),
                family.param_dim()
            )));
        }
        let p = Vector::from_vec(cell_probabilities(family, theta, grid)?);
        let q = raw_scores(family, theta, grid)?.remove(0);
        Ok(Self::from_parts(theta.to_vec(), p, q))
    }

    pub fn from_parts(theta_hat: Vec<f64>, probs: Vector, score: Vector) -> Self {
        let n = probs.len();
        let mut tail_mass = Vector::zeros(n);
        let mut tail_score = Vector::zeros(n);
        let mut tail_score_sq = Vector::zeros(n);
        let (mut m, mut s, mut s2) = (0.0, 0.0, 0.0);
        for j in (0..n).rev() {
            m += probs[j];
            s += score[j] * probs[j];
            s2 += score[j] * score[j] * probs[j];
            tail_mass[j] = m;
            tail_score[j] = s;
            tail_score_sq[j] = s2;
        }
        let mut head_mass = Vector::zeros(n);
        let mut h = 0.0;
        for j in 0..n {
            head_mass[j] = h;
            h += probs[j];
        }
        let cond_mean = tail_score.zip_map(&tail_mass, |s, m| s / m);
        Kt1State { theta_hat, probs, score, tail_mass, head_mass, tail_score, tail_score_sq, cond_mean }
    }

    pub fn n_cells(&self) -> usize {
        self.probs.len()
    }

    fn check_cell(&self, l: usize) -> Result<()> {
        if l >= self.n_cells() {
            return Err(Error::IndexOutOfRange(format!("cell {l} of {}", self.n_cells())));
        }
        if self.tail_mass[l] <= PROB_FLOOR {
            return Err(Error::TailExhausted(l));
        }
        Ok(())
    }

    /// Prediction weights `(a₁, a₂)` with `ν̂_l/n = x₁ a₁ + x₂ a₂`.
    pub fn weights(&self, l: usize, variant: Kt1Variant) -> Result<(f64, f64)> {
        self.check_cell(l)?;
        let (s, t, w, f) = (self.tail_mass[l], self.tail_score[l], self.tail_score_sq[l], self.head_mass[l]);
        let h = self.score[l];
        let p = self.probs[l];
        // With nothing behind cell 0 the centred covariance vanishes; both forms
        // agree in the limit, so cell 0 always uses the uncentred matrix.
        let (m, rhs) = match variant {
            Kt1Variant::Centred if l > 0 => ([[f * s, f * t], [f * t, w - t * t]], [f, h - t]),
            _ => ([[s, t], [t, w]], [1.0, h]),
        };
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if !(det >= SINGULAR_DET) {
            return Err(Error::SingularCovariance { cell: l, det });
        }
        let a1 = (m[1][1] * rhs[0] - m[0][1] * rhs[1]) / det;
        let a2 = (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det;
        Ok((p * a1, p * a2))
    }

    /// Variance of the innovation at cell `l` per unit `n` under the model:
    /// `p_l (1 − p_l [1, h_l] M⁻¹ [1, h_l]ᵀ)`. The regression removes the
    /// part of the cell explained by the future, so this tends to `p_l` only as
    /// the cells shrink.
    pub fn innovation_variance(&self, l: usize) -> Result<f64> {
        let (a1, a2) = self.weights(l, Kt1Variant::Uncentred)?;
        Ok(self.probs[l] * (1.0 - a1 - self.score[l] * a2))
    }

    /// `E x₂*` where `x₂* = x₂ − E_θ^t x₁`: the centred second regressor for one
    /// sample.
    pub fn centred_second_regressor(&self, counts: &CellCounts, l: usize) -> Result<f64> {
        self.check_cell(l)?;
        let (x1, x2) = kt1_regressors(counts, &self.score, l)?;
        Ok(x2 - self.cond_mean[l] * x1)
    }
}

/// `Σ_j Q_{1j}(θ) ν_j`.
fn score_equation(family: &dyn ParametricFamily, grid: &Grid, nu: &[f64], theta: f64) -> Option<f64> {
    let q = raw_scores(family, &[theta], grid).ok()?;
    Some(q[0].iter().zip(nu).map(|(a, b)| a * b).sum())
}

/// Discrete-cell maximum likelihood for a scalar parameter: a root of the score
/// equation `Σ_j Q_{1j}(θ) ν_j = 0`, bracketed outward from `theta0` and then
/// refined by Newton steps that fall back to bisection when they leave the bracket.
pub fn mle_discrete(counts: &CellCounts, family: &dyn ParametricFamily, grid: &Grid, theta0: f64) -> Result<f64> {
    if family.param_dim() != 1 {
        return Err(Error::InvalidFamily(format!("{} is not a one-parameter family", family.name())));
    }
    if counts.n_cells() != grid.n_cells() {
        return Err(Error::DimensionMismatch { expected: grid.n_cells(), actual: counts.n_cells() });
    }
    let n = counts.sample_size() as f64;
    if n == 0.0 {
        return Err(Error::EmptySample);
    }
    let nu = counts.as_f64();
    let g = |t: f64| score_equation(family, grid, &nu, t);
    let g0 = g(theta0).ok_or_else(|| Error::MleNotFound(format!("score undefined at the start value {theta0}")))?;
    if g0 == 0.0 {
        return Ok(theta0);
    }
    let (mut lo, mut glo, mut hi, ghi) = bracket(&g, theta0, g0).ok_or_else(|| {
        Error::MleNotFound("the score equation has no sign change; the maximum is on the boundary".into())
    })?;
    let mut theta = if glo.abs() < ghi.abs() { lo } else { hi };
    let mut gt = if glo.abs() < ghi.abs() { glo } else { ghi };
    for _ in 0..MLE_MAX_ITER {
        if gt.abs() <= 1e-12 * n || (hi - lo).abs() <= 4.0 * f64::EPSILON * theta.abs().max(1e-300) {
            break;
        }
        let h = f64::EPSILON.cbrt() * theta.abs().max(1e-8);
        let slope = match (g(theta + h), g(theta - h)) {
            (Some(a), Some(b)) => (a - b) / (2.0 * h),
            _ => f64::NAN,
        };
        let newton = theta - gt / slope;
        let (a, b) = if lo < hi { (lo, hi) } else { (hi, lo) };
        let next = if newton.is_finite() && newton > a && newton < b { newton } else { 0.5 * (lo + hi) };
        let Some(gn) = g(next) else { break };
        if gn.signum() == glo.signum() {
            lo = next;
            glo = gn;
        } else {
            hi = next;
        }
        theta = next;
        gt = gn;
    }
    if gt.abs() <= 1e-8 * n {
        Ok(theta)
    } else {
        Err(Error::MleNotFound(format!("score equation residual {gt:e} after refinement")))
    }
}

/// Steps outward from `theta0` on both sides, doubling the step, until the score
/// changes sign. Inadmissible steps are halved toward the boundary.
fn bracket(g: &dyn Fn(f64) -> Option<f64>, theta0: f64, g0: f64) -> Option<(f64, f64, f64, f64)> {
    for dir in [1.0, -1.0] {
        let mut step = 0.1 * theta0.abs().max(1.0);
        let mut prev = theta0;
        let mut evals = 0;
        while evals < 400 {
            evals += 1;
            let cand = prev + dir * step;
            match g(cand) {
                Some(v) if v.signum() != g0.signum() || v == 0.0 => return Some((theta0, g0, cand, v)),
                Some(_) => {
                    prev = cand;
                    step *= 2.0;
                    if !prev.is_finite() || prev.abs() > 1e12 {
                        break;
                    }
                }
                None => {
                    step *= 0.5;
                    if step < 1e-15 * prev.abs().max(1e-300) {
                        break;
                    }
                }
            }
        }
    }
    None
}

/// `E_θ^t` at the start of cell `l`: `Σ_{j≥l} Q_{1j} p_j / Σ_{j≥l} p_j`.
pub fn conditional_score_mean(family: &dyn ParametricFamily, theta: &[f64], grid: &Grid, l: usize) -> Result<f64> {
    let state = Kt1State::new(family, theta, grid)?;
    state.check_cell(l)?;
    Ok(state.cond_mean[l])
}

/// `(x₁, x₂)` at cell `l`; `l = N` is allowed and gives `(0, 0)`.
pub fn kt1_regressors(counts: &CellCounts, score: &Vector, l: usize) -> Result<(f64, f64)> {
    let n_cells = counts.n_cells();
    if score.len() != n_cells {
        return Err(Error::DimensionMismatch { expected: n_cells, actual: score.len() });
    }
    if l > n_cells {
        return Err(Error::IndexOutOfRange(format!("cell {l} of {n_cells}")));
    }
    let n = counts.sample_size();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let n = n as f64;
    let (mut x1, mut x2) = (0.0, 0.0);
    for j in l..n_cells {
        let v = counts.counts()[j] as f64;
        x1 += v;
        x2 += score[j] * v;
    }
    Ok((x1 / n, x2 / n))
}

/// Predicted share `ν̂_l / n`.
pub fn kt1_predict(counts: &CellCounts, state: &Kt1State, l: usize, variant: Kt1Variant) -> Result<f64> {
    let (a1, a2) = state.weights(l, variant)?;
    let (x1, x2) = kt1_regressors(counts, &state.score, l)?;
    Ok(x1 * a1 + x2 * a2)
}

/// Largest `l` such that every cell up to `l` has expected survivors at least
/// [`MIN_TAIL_COUNT`] and a nonsingular regression matrix.
pub fn default_cutoff(state: &Kt1State, sample_size: u64, variant: Kt1Variant) -> Result<usize> {
    let n = sample_size as f64;
    let mut last = None;
    for l in 0..state.n_cells() {
        if state.tail_mass[l] * n < MIN_TAIL_COUNT || state.weights(l, variant).is_err() {
            break;
        }
        last = Some(l);
    }
    last.ok_or(Error::SingularCovariance { cell: 0, det: 0.0 })
}

/// Innovations `√n (ν_l/n − ν̂_l/n)` for `l ≤ cutoff`, zero beyond.
pub fn kt1_innovations(
    counts: &CellCounts,
    state: &Kt1State,
    cutoff: usize,
    variant: Kt1Variant,
) -> Result<ProcessIncrements> {
    let n_cells = state.n_cells();
    if counts.n_cells() != n_cells {
        return Err(Error::DimensionMismatch { expected: n_cells, actual: counts.n_cells() });
    }
    if cutoff >= n_cells {
        return Err(Error::IndexOutOfRange(format!("cutoff {cutoff} of {n_cells}")));
    }
    let n = counts.sample_size();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let n = n as f64;
    let mut values = Vector::zeros(n_cells);
    for l in 0..=cutoff {
        let pred = kt1_predict(counts, state, l, variant)?;
        values[l] = n.sqrt() * (counts.counts()[l] as f64 / n - pred);
    }
    ProcessIncrements::new(values, TimeScale::new(state.probs.clone()), ProcessKind::Empirical)
}
