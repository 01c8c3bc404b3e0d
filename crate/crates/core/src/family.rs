//! Parametric families of distributions: CDFs, analytic CDF gradients and
//! quantiles used for sampling.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};

/// A family `F_θ` indexed by a `K`-vector. `K = 0` is a fully specified
/// hypothesis.
pub trait ParametricFamily: Send + Sync {
    fn name(&self) -> String;

    fn param_dim(&self) -> usize;

    fn admits(&self, theta: &[f64]) -> bool;

    /// `P(X ≤ x)`.
    fn cdf(&self, theta: &[f64], x: f64) -> f64;

    /// `P(X < x)`; equal to [`cdf`](Self::cdf) for continuous families.
    fn cdf_left(&self, theta: &[f64], x: f64) -> f64 {
        self.cdf(theta, x)
    }

    /// Analytic `∂F_θ(x)/∂θ_k`, if available. Only meaningful for continuous
    /// families, where left and right limits agree.
    fn cdf_gradient(&self, _theta: &[f64], _x: f64) -> Option<Vec<f64>> {
        None
    }

    /// Closed-form quantile, if available.
    fn quantile(&self, _theta: &[f64], _u: f64) -> Option<f64> {
        None
    }

    /// Finite lower end of the support, if the family has one.
    fn support_floor(&self, _theta: &[f64]) -> Option<f64> {
        None
    }

    /// Draw one observation from a uniform variate `u ∈ (0, 1)`.
    fn sample(&self, theta: &[f64], u: f64) -> f64 {
        self.quantile(theta, u).unwrap_or_else(|| bisect_quantile(self, theta, u, 1e-14))
    }
}

impl fmt::Debug for dyn ParametricFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParametricFamily({}, K={})", self.name(), self.param_dim())
    }
}

fn bisect_quantile<F: ParametricFamily + ?Sized>(family: &F, theta: &[f64], u: f64, tol: f64) -> f64 {
    let mut lo = family.support_floor(theta).unwrap_or(-1.0);
    let mut hi = lo + 1.0;
    let mut width = 1.0;
    while family.cdf(theta, lo) > u {
        width *= 2.0;
        lo -= width;
    }
    width = 1.0;
    while family.cdf(theta, hi) < u {
        width *= 2.0;
        hi += width;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if family.cdf(theta, mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol * hi.abs().max(1.0) {
            break;
        }
    }
    hi
}

/// Exponential distribution with rate `λ`; either estimated (`θ = [λ]`) or fixed.
#[derive(Debug, Clone, Copy)]
pub struct Exponential {
    fixed_rate: Option<f64>,
}

impl Exponential {
    pub fn rate() -> Self {
        Exponential { fixed_rate: None }
    }

    pub fn fixed(rate: f64) -> Self {
        Exponential { fixed_rate: Some(rate) }
    }

    fn lambda(&self, theta: &[f64]) -> f64 {
        self.fixed_rate.unwrap_or_else(|| theta[0])
    }
}

impl ParametricFamily for Exponential {
    fn name(&self) -> String {
        match self.fixed_rate {
            Some(r) => format!("exponential(rate={r})"),
            None => "exponential".to_string(),
        }
    }

    fn param_dim(&self) -> usize {
        usize::from(self.fixed_rate.is_none())
    }

    fn admits(&self, theta: &[f64]) -> bool {
        theta.len() == self.param_dim() && {
            let l = self.lambda(theta);
            l.is_finite() && l > 0.0
        }
    }

    fn cdf(&self, theta: &[f64], x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            -(-self.lambda(theta) * x).exp_m1()
        }
    }

    fn cdf_gradient(&self, theta: &[f64], x: f64) -> Option<Vec<f64>> {
        if self.fixed_rate.is_some() {
            return Some(Vec::new());
        }
        let g = if x <= 0.0 || x.is_infinite() { 0.0 } else { x * (-self.lambda(theta) * x).exp() };
        Some(vec![g])
    }

    fn quantile(&self, theta: &[f64], u: f64) -> Option<f64> {
        Some(-(-u).ln_1p() / self.lambda(theta))
    }

    fn support_floor(&self, _theta: &[f64]) -> Option<f64> {
        Some(0.0)
    }
}

/// Which of the normal parameters are free.
#[derive(Debug, Clone, Copy, PartialEq)]
enum NormalMode {
    Fixed { mean: f64, sd: f64 },
    Location { sd: f64 },
    LocationScale,
}

/// Normal distribution, with the mean, both parameters, or neither estimated.
#[derive(Debug, Clone, Copy)]
pub struct Normal {
    mode: NormalMode,
}

impl Normal {
    pub fn fixed(mean: f64, sd: f64) -> Self {
        Normal { mode: NormalMode::Fixed { mean, sd } }
    }

    /// `θ = [mean]` with a known standard deviation.
    pub fn location(sd: f64) -> Self {
        Normal { mode: NormalMode::Location { sd } }
    }

    /// `θ = [mean, sd]`.
    pub fn location_scale() -> Self {
        Normal { mode: NormalMode::LocationScale }
    }

    fn mean_sd(&self, theta: &[f64]) -> (f64, f64) {
        match self.mode {
            NormalMode::Fixed { mean, sd } => (mean, sd),
            NormalMode::Location { sd } => (theta[0], sd),
            NormalMode::LocationScale => (theta[0], theta[1]),
        }
    }
}

fn std_normal() -> StdNormal {
    StdNormal::new(0.0, 1.0).expect("standard normal")
}

impl ParametricFamily for Normal {
    fn name(&self) -> String {
        match self.mode {
            NormalMode::Fixed { mean, sd } => format!("normal(mean={mean},sd={sd})"),
            NormalMode::Location { sd } => format!("normal-location(sd={sd})"),
            NormalMode::LocationScale => "normal".to_string(),
        }
    }

    fn param_dim(&self) -> usize {
        match self.mode {
            NormalMode::Fixed { .. } => 0,
            NormalMode::Location { .. } => 1,
            NormalMode::LocationScale => 2,
        }
    }

    fn admits(&self, theta: &[f64]) -> bool {
        if theta.len() != self.param_dim() || theta.iter().any(|t| !t.is_finite()) {
            return false;
        }
        let (_, sd) = self.mean_sd(theta);
        sd > 0.0 && sd.is_finite()
    }

    fn cdf(&self, theta: &[f64], x: f64) -> f64 {
        let (m, s) = self.mean_sd(theta);
        0.5 * libm::erfc(-(x - m) / (s * std::f64::consts::SQRT_2))
    }

    fn cdf_gradient(&self, theta: &[f64], x: f64) -> Option<Vec<f64>> {
        let (m, s) = self.mean_sd(theta);
        if x.is_infinite() {
            return Some(vec![0.0; self.param_dim()]);
        }
        let z = (x - m) / s;
        let dens = std_normal().pdf(z);
        Some(match self.mode {
            NormalMode::Fixed { .. } => Vec::new(),
            NormalMode::Location { .. } => vec![-dens / s],
            NormalMode::LocationScale => vec![-dens / s, -dens * z / s],
        })
    }

    fn quantile(&self, theta: &[f64], u: f64) -> Option<f64> {
        let (m, s) = self.mean_sd(theta);
        Some(m + s * std_normal().inverse_cdf(u))
    }
}

/// Uniform distribution on `[a, b)`, fully specified.
#[derive(Debug, Clone, Copy)]
pub struct Uniform {
    pub lower: f64,
    pub upper: f64,
}

impl ParametricFamily for Uniform {
    fn name(&self) -> String {
        format!("uniform({},{})", self.lower, self.upper)
    }

    fn param_dim(&self) -> usize {
        0
    }

    fn admits(&self, theta: &[f64]) -> bool {
        theta.is_empty() && self.lower < self.upper
    }

    fn cdf(&self, _theta: &[f64], x: f64) -> f64 {
        ((x - self.lower) / (self.upper - self.lower)).clamp(0.0, 1.0)
    }

    fn cdf_gradient(&self, _theta: &[f64], _x: f64) -> Option<Vec<f64>> {
        Some(Vec::new())
    }

    fn quantile(&self, _theta: &[f64], u: f64) -> Option<f64> {
        Some(self.lower + u * (self.upper - self.lower))
    }

    fn support_floor(&self, _theta: &[f64]) -> Option<f64> {
        Some(self.lower)
    }
}

/// Unit point mass at `at`.
#[derive(Debug, Clone, Copy)]
pub struct PointMass {
    pub at: f64,
}

impl ParametricFamily for PointMass {
    fn name(&self) -> String {
        format!("point-mass({})", self.at)
    }

    fn param_dim(&self) -> usize {
        0
    }

    fn admits(&self, theta: &[f64]) -> bool {
        theta.is_empty()
    }

    fn cdf(&self, _theta: &[f64], x: f64) -> f64 {
        if x >= self.at {
            1.0
        } else {
            0.0
        }
    }

    fn cdf_left(&self, _theta: &[f64], x: f64) -> f64 {
        if x > self.at {
            1.0
        } else {
            0.0
        }
    }

    fn sample(&self, _theta: &[f64], _u: f64) -> f64 {
        self.at
    }
}

type CellProbFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A family given directly by its cell probabilities `p(θ)` on a fixed set of
/// atoms. Mass `p_j` sits at `atoms[j]`. Scores come from finite differences only.
#[derive(Clone)]
pub struct Tabulated {
    name: String,
    atoms: Vec<f64>,
    param_dim: usize,
    probs: Arc<CellProbFn>,
}

impl fmt::Debug for Tabulated {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tabulated")
            .field("name", &self.name)
            .field("atoms", &self.atoms)
            .field("param_dim", &self.param_dim)
            .finish()
    }
}

impl Tabulated {
    pub fn new<F>(name: impl Into<String>, atoms: Vec<f64>, param_dim: usize, probs: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Tabulated { name: name.into(), atoms, param_dim, probs: Arc::new(probs) }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn probs(&self, theta: &[f64]) -> Vec<f64> {
        (self.probs)(theta)
    }
}

impl ParametricFamily for Tabulated {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn param_dim(&self) -> usize {
        self.param_dim
    }

    fn admits(&self, theta: &[f64]) -> bool {
        if theta.len() != self.param_dim || theta.iter().any(|t| !t.is_finite()) {
            return false;
        }
        let p = self.probs(theta);
        p.len() == self.atoms.len() && p.iter().all(|v| v.is_finite() && *v >= 0.0)
    }

    fn cdf(&self, theta: &[f64], x: f64) -> f64 {
        let p = self.probs(theta);
        self.atoms.iter().zip(&p).filter(|(a, _)| **a <= x).map(|(_, v)| v).sum()
    }

    fn cdf_left(&self, theta: &[f64], x: f64) -> f64 {
        let p = self.probs(theta);
        self.atoms.iter().zip(&p).filter(|(a, _)| **a < x).map(|(_, v)| v).sum()
    }

    fn support_floor(&self, _theta: &[f64]) -> Option<f64> {
        self.atoms.first().copied()
    }

    fn sample(&self, theta: &[f64], u: f64) -> f64 {
        let p = self.probs(theta);
        let mut acc = 0.0;
        for (a, v) in self.atoms.iter().zip(&p) {
            acc += v;
            if u < acc {
                return *a;
            }
        }
        *self.atoms.last().expect("tabulated family has atoms")
    }
}

/// Family selection by name plus initial/fixed parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl FamilySpec {
    pub fn new(name: impl Into<String>, params: Vec<f64>) -> Self {
        FamilySpec { name: name.into(), params }
    }

    /// Builds the family and returns it with the starting parameter vector.
    ///
    /// | name                | params            | K |
    /// |---------------------|-------------------|---|
    /// | `exponential`       | `[rate0]` (opt.)  | 1 |
    /// | `exponential-fixed` | `[rate]`          | 0 |
    /// | `normal`            | `[mean0, sd0]`    | 2 |
    /// | `normal-location`   | `[mean0, sd]`     | 1 |
    /// | `normal-fixed`      | `[mean, sd]`      | 0 |
    /// | `uniform`           | `[a, b]`          | 0 |
    pub fn build(&self) -> Result<(Arc<dyn ParametricFamily>, Vec<f64>)> {
        let p = &self.params;
        let want = |n: usize| -> Result<()> {
            if p.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidFamily(format!("family '{}' takes {} parameter(s), got {}", self.name, n, p.len())))
            }
        };
        let (family, theta): (Arc<dyn ParametricFamily>, Vec<f64>) = match self.name.as_str() {
            "exponential" => {
                let rate = match p.len() {
                    0 => 1.0,
                    _ => {
                        want(1)?;
                        p[0]
                    }
                };
                (Arc::new(Exponential::rate()), vec![rate])
            }
            "exponential-fixed" => {
                want(1)?;
                (Arc::new(Exponential::fixed(p[0])), Vec::new())
            }
            "normal" => {
                let init = if p.is_empty() { vec![0.0, 1.0] } else { want(2).map(|_| p.clone())? };
                (Arc::new(Normal::location_scale()), init)
            }
            "normal-location" => {
                want(2)?;
                (Arc::new(Normal::location(p[1])), vec![p[0]])
            }
            "normal-fixed" => {
                want(2)?;
                (Arc::new(Normal::fixed(p[0], p[1])), Vec::new())
            }
            "uniform" => {
                want(2)?;
                (Arc::new(Uniform { lower: p[0], upper: p[1] }), Vec::new())
            }
            other => return Err(Error::InvalidFamily(format!("unknown family '{other}'"))),
        };
        if !family.admits(&theta) {
            return Err(Error::InvalidFamily(format!(
                "parameters {:?} are not admissible for '{}'",
                self.params, self.name
            )));
        }
        Ok((family, theta))
    }
}
