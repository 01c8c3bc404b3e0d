//! Discrete approximation of a distribution on a fixed grid of cells.
//!
//! Cell `j` is `[x_j, x_{j+1})` with `x_{N+1} = ∞`. An atom sitting exactly on a
//! grid point belongs to the cell on its right. The first grid edge acts as the
//! support floor: whatever mass the family puts below it is attributed to cell 0,
//! while sample values below it are rejected.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::ParametricFamily;
use crate::linalg::Vector;

/// Cell probabilities below this are rejected instead of merged.
pub const PROB_FLOOR: f64 = 1e-12;
const SUM_TOL: f64 = 1e-12;
const BISECTION_TOL: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 200;

/// Strictly increasing cell edges with a support floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    atoms: Vec<f64>,
    lower_bound: f64,
}

impl Grid {
    pub fn new(atoms: Vec<f64>, lower_bound: f64) -> Result<Self> {
        let mut problems = Vec::new();
        if atoms.is_empty() {
            problems.push("grid has no cells".to_string());
        }
        if atoms.iter().any(|a| !a.is_finite()) || !lower_bound.is_finite() {
            problems.push("grid edges must be finite".to_string());
        }
        if atoms.windows(2).any(|w| w[0] >= w[1]) {
            problems.push("not increasing".to_string());
        }
        if atoms.first().is_some_and(|a| *a < lower_bound) {
            problems.push("first atom below lower bound".to_string());
        }
        if problems.is_empty() {
            Ok(Grid { atoms, lower_bound })
        } else {
            Err(Error::InvalidDistribution(problems))
        }
    }

    /// Grid whose floor is its first edge.
    pub fn from_edges(atoms: Vec<f64>) -> Result<Self> {
        let lb = atoms.first().copied().unwrap_or(f64::NAN);
        Grid::new(atoms, lb)
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn n_cells(&self) -> usize {
        self.atoms.len()
    }

    /// Index of the cell containing `x`, or `None` below the first edge.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        let above = self.atoms.partition_point(|a| *a <= x);
        above.checked_sub(1)
    }
}

/// A discrete distribution `P` with atoms `x_j` and saltus `p_j > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    grid: Grid,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(atoms: Vec<f64>, probs: Vec<f64>, lower_bound: f64) -> Result<Self> {
        let violations = validate_distribution(&atoms, &probs, lower_bound);
        if !violations.is_empty() {
            return Err(Error::InvalidDistribution(violations.iter().map(|v| v.to_string()).collect()));
        }
        Ok(DiscreteDistribution { grid: Grid { atoms, lower_bound }, probs })
    }

    /// Discretize `family` at `theta` on `grid`.
    pub fn from_family(family: &dyn ParametricFamily, theta: &[f64], grid: &Grid) -> Result<Self> {
        let probs = cell_probabilities(family, theta, grid)?;
        Ok(DiscreteDistribution { grid: grid.clone(), probs })
    }

    /// Discrete uniform distribution on `n` cells with atoms `0, 1, …, n−1`.
    pub fn uniform(n: usize) -> Result<Self> {
        let atoms = (0..n).map(|j| j as f64).collect();
        DiscreteDistribution::new(atoms, vec![1.0 / n as f64; n], 0.0)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn atoms(&self) -> &[f64] {
        self.grid.atoms()
    }

    pub fn lower_bound(&self) -> f64 {
        self.grid.lower_bound
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn probs_vector(&self) -> Vector {
        Vector::from_column_slice(&self.probs)
    }

    pub fn n_cells(&self) -> usize {
        self.probs.len()
    }

    /// `P(x_j) = Σ_{k ≤ j} p_k` for every cell.
    pub fn cumulative(&self) -> Vec<f64> {
        self.probs
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }

    /// The step function `P(x)`: 0 below the first atom, right-continuous.
    pub fn cdf(&self, x: f64) -> f64 {
        match self.grid.cell_of(x) {
            None => 0.0,
            Some(j) => self.probs[..=j].iter().sum(),
        }
    }
}

/// Observed frequencies `ν_j` with `n = Σ ν_j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    counts: Vec<u64>,
    sample_size: u64,
}

impl CellCounts {
    pub fn new(counts: Vec<u64>) -> Self {
        let sample_size = counts.iter().sum();
        CellCounts { counts, sample_size }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn sample_size(&self) -> u64 {
        self.sample_size
    }

    pub fn n_cells(&self) -> usize {
        self.counts.len()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// `p_j = F_θ(x_{j+1}⁻) − F_θ(x_j⁻)`, with the floor convention for cell 0.
pub fn cell_probabilities(family: &dyn ParametricFamily, theta: &[f64], grid: &Grid) -> Result<Vec<f64>> {
    if !family.admits(theta) {
        return Err(Error::InvalidFamily(format!("parameter {:?} not admissible for {}", theta, family.name())));
    }
    let n = grid.n_cells();
    // F(x_j⁻) at interior edges; 0 at the floor, 1 at +∞.
    let mut left = Vec::with_capacity(n + 1);
    left.push(0.0);
    for &x in &grid.atoms[1..] {
        left.push(family.cdf_left(theta, x));
    }
    left.push(1.0);
    if left.iter().any(|v| !(0.0..=1.0).contains(v)) || left.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidFamily(format!(
            "{} has a non-monotone or out-of-range cdf on the grid",
            family.name()
        )));
    }
    let probs: Vec<f64> = left.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some((cell, &prob)) = probs.iter().enumerate().find(|(_, p)| **p < PROB_FLOOR) {
        return Err(Error::GridTooFine { cell, prob });
    }
    Ok(probs)
}

/// Edges at the `j/N` quantiles of `F_θ`, starting from `lower_bound`.
pub fn build_equiprobable_grid(
    family: &dyn ParametricFamily,
    theta: &[f64],
    cells: usize,
    lower_bound: f64,
) -> Result<DiscreteDistribution> {
    if cells < 2 {
        return Err(Error::InvalidInput(format!("equiprobable grid needs at least 2 cells, got {cells}")));
    }
    if !family.admits(theta) {
        return Err(Error::InvalidFamily(format!("parameter {theta:?} not admissible")));
    }
    let mut atoms = Vec::with_capacity(cells);
    atoms.push(lower_bound);
    for k in 1..cells {
        let target = k as f64 / cells as f64;
        let prev = *atoms.last().unwrap();
        atoms.push(quantile_bisection(family, theta, target, prev)?);
    }
    let grid = Grid::new(atoms, lower_bound)?;
    let dist = DiscreteDistribution::from_family(family, theta, &grid)?;
    let worst = dist.probs().iter().map(|p| (p - 1.0 / cells as f64).abs()).fold(0.0, f64::max);
    if worst > 1e-9 {
        return Err(Error::InvalidFamily(format!("equiprobable grid off by {worst:e}; cdf is not continuous")));
    }
    Ok(dist)
}

fn quantile_bisection(family: &dyn ParametricFamily, theta: &[f64], target: f64, floor: f64) -> Result<f64> {
    let no_bracket = || Error::InvalidFamily(format!("cannot bracket the {target} quantile above {floor}"));
    let mut lo = floor;
    if family.cdf(theta, lo) >= target {
        return Err(no_bracket());
    }
    let mut step = 1.0_f64.max(floor.abs());
    let mut hi = lo + step;
    let mut expansions = 0;
    while family.cdf(theta, hi) < target {
        lo = hi;
        step *= 2.0;
        hi = lo + step;
        expansions += 1;
        if expansions > 1100 || !hi.is_finite() {
            return Err(no_bracket());
        }
    }
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let f = family.cdf(theta, mid);
        if (f - target).abs() <= BISECTION_TOL {
            return Ok(mid);
        }
        if f < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (family.cdf(theta, hi) - target).abs() <= BISECTION_TOL {
        Ok(hi)
    } else {
        Err(Error::InvalidFamily(format!("quantile bisection for {target} did not converge")))
    }
}

/// `ν_j = #{i : x_j ≤ sample_i < x_{j+1}}`.
pub fn counts_from_sample(sample: &[f64], dist: &DiscreteDistribution) -> Result<CellCounts> {
    counts_on_grid(sample, dist.grid())
}

pub fn counts_on_grid(sample: &[f64], grid: &Grid) -> Result<CellCounts> {
    let mut counts = vec![0u64; grid.n_cells()];
    for &x in sample {
        if x.is_nan() {
            return Err(Error::InvalidInput("sample contains NaN".into()));
        }
        let cell = grid.cell_of(x).ok_or(Error::OutOfSupport { value: x, floor: grid.atoms[0] })?;
        counts[cell] += 1;
    }
    Ok(CellCounts::new(counts))
}

/// A broken [`DiscreteDistribution`] invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    LengthMismatch { atoms: usize, probs: usize },
    Empty,
    NotIncreasing,
    BelowLowerBound,
    NonPositive { cell: usize, prob: f64 },
    SumNotOne(f64),
    NotFinite,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LengthMismatch { atoms, probs } => write!(f, "{atoms} atoms but {probs} probabilities"),
            Violation::Empty => write!(f, "no cells"),
            Violation::NotIncreasing => write!(f, "not increasing"),
            Violation::BelowLowerBound => write!(f, "first atom below lower bound"),
            Violation::NonPositive { cell, prob } => write!(f, "p[{cell}] = {prob} is not positive"),
            Violation::SumNotOne(s) => write!(f, "sum ≠ 1 (sum = {s})"),
            Violation::NotFinite => write!(f, "non-finite value"),
        }
    }
}

/// Checks the [`DiscreteDistribution`] invariants; an empty list means valid.
pub fn validate_distribution(atoms: &[f64], probs: &[f64], lower_bound: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    if atoms.len() != probs.len() {
        out.push(Violation::LengthMismatch { atoms: atoms.len(), probs: probs.len() });
    }
    if atoms.is_empty() || probs.is_empty() {
        out.push(Violation::Empty);
    }
    if atoms.iter().chain(probs).any(|v| !v.is_finite()) || lower_bound.is_nan() {
        out.push(Violation::NotFinite);
    }
    if atoms.windows(2).any(|w| w[0] >= w[1]) {
        out.push(Violation::NotIncreasing);
    }
    if atoms.first().is_some_and(|a| *a < lower_bound) {
        out.push(Violation::BelowLowerBound);
    }
    for (cell, &prob) in probs.iter().enumerate() {
        if !(prob > 0.0) {
            out.push(Violation::NonPositive { cell, prob });
        }
    }
    let sum: f64 = probs.iter().sum();
    if !probs.is_empty() && (sum - 1.0).abs() > SUM_TOL {
        out.push(Violation::SumNotOne(sum));
    }
    out
}

/// Grid configuration: `{"scheme":"equiprobable","cells":N}` or
/// `{"scheme":"edges","edges":[...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum GridSpec {
    Equiprobable {
        cells: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower_bound: Option<f64>,
    },
    Edges {
        edges: Vec<f64>,
    },
}

impl GridSpec {
    pub fn n_cells(&self) -> usize {
        match self {
            GridSpec::Equiprobable { cells, .. } => *cells,
            GridSpec::Edges { edges } => edges.len(),
        }
    }

    /// Resolves the spec into a concrete grid for `family` at `theta`. Equiprobable
    /// grids without an explicit floor use the family's support floor, or its
    /// `1e-16` quantile for families on the whole line.
    pub fn resolve(&self, family: &dyn ParametricFamily, theta: &[f64]) -> Result<Grid> {
        match self {
            GridSpec::Edges { edges } => Grid::from_edges(edges.clone()),
            GridSpec::Equiprobable { cells, lower_bound } => {
                let floor =
                    lower_bound.or_else(|| family.support_floor(theta)).unwrap_or_else(|| family.sample(theta, 1e-16));
                Ok(build_equiprobable_grid(family, theta, *cells, floor)?.grid().clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{Exponential, Normal, PointMass, Uniform};

    fn unit_uniform() -> Uniform {
        Uniform { lower: 0.0, upper: 1.0 }
    }

    #[test]
    fn uniform_halves() {
        let g = Grid::from_edges(vec![0.0, 0.5]).unwrap();
        let p = cell_probabilities(&unit_uniform(), &[], &g).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exponential_median_split() {
        let g = Grid::from_edges(vec![0.0, 2f64.ln()]).unwrap();
        let p = cell_probabilities(&Exponential::rate(), &[1.0], &g).unwrap();
        // 1 - e^{-ln 2} = 1/2
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn atom_on_grid_point_goes_right() {
        let g = Grid::from_edges(vec![0.0, 0.5]).unwrap();
        let err = cell_probabilities(&PointMass { at: 0.5 }, &[], &g).unwrap_err();
        assert!(matches!(err, Error::GridTooFine { cell: 0, .. }));
    }

    #[test]
    fn inadmissible_theta_rejected() {
        let g = Grid::from_edges(vec![0.0, 1.0]).unwrap();
        assert!(matches!(cell_probabilities(&Exponential::rate(), &[-1.0], &g), Err(Error::InvalidFamily(_))));
    }

    #[test]
    fn equiprobable_uniform_quartiles() {
        let d = build_equiprobable_grid(&unit_uniform(), &[], 4, 0.0).unwrap();
        for (a, e) in d.atoms().iter().zip([0.0, 0.25, 0.5, 0.75]) {
            assert!((a - e).abs() < 1e-11, "{a} vs {e}");
        }
        for p in d.probs() {
            assert!((p - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn equiprobable_exponential_median() {
        let d = build_equiprobable_grid(&Exponential::rate(), &[1.0], 2, 0.0).unwrap();
        assert_eq!(d.atoms()[0], 0.0);
        assert!((d.atoms()[1] - 2f64.ln()).abs() < 1e-11);
    }

    #[test]
    fn equiprobable_needs_two_cells() {
        assert!(build_equiprobable_grid(&unit_uniform(), &[], 1, 0.0).is_err());
    }

    #[test]
    fn equiprobable_fails_without_bracket() {
        // floor already above the first quantile
        let err = build_equiprobable_grid(&unit_uniform(), &[], 4, 0.5).unwrap_err();
        assert!(matches!(err, Error::InvalidFamily(_)));
    }

    #[test]
    fn equiprobable_normal_with_default_floor() {
        let spec = GridSpec::Equiprobable { cells: 10, lower_bound: None };
        let f = Normal::location(1.0);
        let g = spec.resolve(&f, &[0.0]).unwrap();
        let p = cell_probabilities(&f, &[0.0], &g).unwrap();
        for v in &p {
            assert!((v - 0.1).abs() < 1e-9);
        }
        assert!(g.atoms()[0] < -8.0);
    }

    #[test]
    fn counts_examples() {
        let d = DiscreteDistribution::new(vec![0.0, 0.5], vec![0.5, 0.5], 0.0).unwrap();
        assert_eq!(counts_from_sample(&[0.1, 0.6], &d).unwrap().counts(), &[1, 1]);
        assert_eq!(counts_from_sample(&[0.5], &d).unwrap().counts(), &[0, 1]);
        assert!(matches!(counts_from_sample(&[-1.0], &d), Err(Error::OutOfSupport { .. })));
    }

    #[test]
    fn validation_examples() {
        assert!(validate_distribution(&[0.0, 1.0], &[0.5, 0.5], 0.0).is_empty());
        let v = validate_distribution(&[0.0, 1.0], &[0.5, 0.4], 0.0);
        assert!(matches!(v.as_slice(), [Violation::SumNotOne(_)]));
        assert!(v[0].to_string().starts_with("sum ≠ 1"));
        let v = validate_distribution(&[1.0, 0.0], &[0.5, 0.5], 0.0);
        assert_eq!(v, vec![Violation::NotIncreasing]);
        assert_eq!(v[0].to_string(), "not increasing");
    }

    #[test]
    fn grid_spec_json_forms() {
        let e: GridSpec = serde_json::from_str(r#"{"scheme":"equiprobable","cells":20}"#).unwrap();
        assert_eq!(e, GridSpec::Equiprobable { cells: 20, lower_bound: None });
        let e: GridSpec = serde_json::from_str(r#"{"scheme":"edges","edges":[0,1,2]}"#).unwrap();
        assert_eq!(e, GridSpec::Edges { edges: vec![0.0, 1.0, 2.0] });
    }

    #[test]
    fn step_cdf_is_right_continuous() {
        let d = DiscreteDistribution::new(vec![0.0, 1.0, 2.0], vec![0.2, 0.3, 0.5], 0.0).unwrap();
        assert_eq!(d.cdf(-0.1), 0.0);
        assert!((d.cdf(1.0) - 0.5).abs() < 1e-15);
        assert!((d.cdf(1.5) - 0.5).abs() < 1e-15);
        assert!((d.cdf(2.0) - 1.0).abs() < 1e-15);
        assert!((d.cumulative()[2] - 1.0).abs() < 1e-15);
    }
}
