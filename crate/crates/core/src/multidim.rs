//! Two-dimensional grids flattened row-major into `N_x · N_y` vectors, the
//! Brownian pillow and colour-blind symmetrization of rectangles.
//!
//! Indices are 0-based: cell `(i, j)` has flat index `i · N_y + j`.

use crate::discretization::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::linalg::{max_abs_vec, weighted_gram_schmidt, Matrix, Vector};
use crate::operators::{LinearOperator, OperatorRole};
use crate::processes::{DualFunction, TimeScale};

const MASS_TOL: f64 = 1e-12;

/// Cell probabilities `h_ij` on a product of two grids, with their marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    x_atoms: Vec<f64>,
    y_atoms: Vec<f64>,
    probs: Matrix,
    marginal_x: Vector,
    marginal_y: Vector,
}

impl Grid2D {
    pub fn new(x_atoms: Vec<f64>, y_atoms: Vec<f64>, probs: Matrix) -> Result<Self> {
        if probs.nrows() != x_atoms.len() || probs.ncols() != y_atoms.len() {
            return Err(Error::DimensionMismatch {
                expected: x_atoms.len() * y_atoms.len(),
                actual: probs.nrows() * probs.ncols(),
            });
        }
        let mut problems = Vec::new();
        for (name, atoms) in [("x", &x_atoms), ("y", &y_atoms)] {
            if atoms.is_empty() || atoms.windows(2).any(|w| !(w[0] < w[1])) {
                problems.push(format!("{name} atoms not increasing"));
            }
        }
        if let Some(v) = probs.iter().find(|v| !(**v > 0.0)) {
            problems.push(format!("non-positive cell probability {v}"));
        }
        let total = probs.sum();
        if (total - 1.0).abs() > MASS_TOL {
            problems.push(format!("sum ≠ 1 (sum = {total})"));
        }
        if !problems.is_empty() {
            return Err(Error::InvalidDistribution(problems));
        }
        let marginal_x = Vector::from_fn(probs.nrows(), |i, _| probs.row(i).sum());
        let marginal_y = Vector::from_fn(probs.ncols(), |j, _| probs.column(j).sum());
        Ok(Grid2D { x_atoms, y_atoms, probs, marginal_x, marginal_y })
    }

    /// `h_ij = f_i g_j`.
    pub fn independent(x: &DiscreteDistribution, y: &DiscreteDistribution) -> Result<Self> {
        let px = x.probs_vector();
        let py = y.probs_vector();
        Grid2D::new(x.atoms().to_vec(), y.atoms().to_vec(), &px * py.transpose())
    }

    pub fn x_atoms(&self) -> &[f64] {
        &self.x_atoms
    }

    pub fn y_atoms(&self) -> &[f64] {
        &self.y_atoms
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn marginal_x(&self) -> &Vector {
        &self.marginal_x
    }

    pub fn marginal_y(&self) -> &Vector {
        &self.marginal_y
    }

    pub fn nx(&self) -> usize {
        self.x_atoms.len()
    }

    pub fn ny(&self) -> usize {
        self.y_atoms.len()
    }

    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major flattening of `h`.
    pub fn flat_probs(&self) -> Vector {
        Vector::from_fn(self.len(), |k, _| self.probs[(k / self.ny(), k % self.ny())])
    }

    pub fn time_scale(&self) -> TimeScale {
        TimeScale::new(self.flat_probs())
    }

    pub fn flatten(&self, i: usize, j: usize) -> Result<usize> {
        if i >= self.nx() || j >= self.ny() {
            return Err(Error::IndexOutOfRange(format!("({i}, {j}) on a {}×{} grid", self.nx(), self.ny())));
        }
        Ok(i * self.ny() + j)
    }
}

/// `(i, j) ↦ i·N + j` on an `N × N` grid.
pub fn flatten_2d(i: usize, j: usize, n: usize) -> Result<usize> {
    if i >= n || j >= n {
        return Err(Error::IndexOutOfRange(format!("({i}, {j}) with N = {n}")));
    }
    Ok(i * n + j)
}

pub fn unflatten_2d(k: usize, n: usize) -> Result<(usize, usize)> {
    if k >= n * n {
        return Err(Error::IndexOutOfRange(format!("{k} with N = {n}")));
    }
    Ok((k / n, k % n))
}

/// Bijection between unordered pairs `{i, j}` of `0..N` and `0..N(N+1)/2`,
/// enumerating `i ≤ j` row by row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymIndexMap {
    n: usize,
}

impl SymIndexMap {
    pub fn new(n: usize) -> Self {
        SymIndexMap { n }
    }

    pub fn len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn index(&self, i: usize, j: usize) -> Result<usize> {
        if i >= self.n || j >= self.n {
            return Err(Error::IndexOutOfRange(format!("({i}, {j}) with N = {}", self.n)));
        }
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        // rows 0..a hold n, n-1, …, n-a+1 pairs
        Ok(a * (2 * self.n - a + 1) / 2 + (b - a))
    }

    pub fn pair(&self, k: usize) -> Result<(usize, usize)> {
        if k >= self.len() {
            return Err(Error::IndexOutOfRange(format!("{k} of {}", self.len())));
        }
        let mut start = 0;
        for a in 0..self.n {
            let row = self.n - a;
            if k < start + row {
                return Ok((a, a + (k - start)));
            }
            start += row;
        }
        unreachable!("k < len")
    }

    /// Sums `v(i, j) + v(j, i)` (once on the diagonal) into the unordered layout.
    pub fn fold(&self, flat: &Vector) -> Result<Vector> {
        if flat.len() != self.n * self.n {
            return Err(Error::DimensionMismatch { expected: self.n * self.n, actual: flat.len() });
        }
        let mut out = Vector::zeros(self.len());
        for i in 0..self.n {
            for j in 0..self.n {
                out[self.index(i, j)?] += flat[i * self.n + j];
            }
        }
        Ok(out)
    }
}

/// `𝟙{x_i ≤ a, y_j ≤ b}` over the flattened plane.
pub fn rectangle_indicator(a: f64, b: f64, grid: &Grid2D) -> DualFunction {
    let ny = grid.ny();
    let values = Vector::from_fn(grid.len(), |k, _| {
        let (i, j) = (k / ny, k % ny);
        if grid.x_atoms[i] <= a && grid.y_atoms[j] <= b {
            1.0
        } else {
            0.0
        }
    });
    DualFunction { values, scale: grid.time_scale() }
}

/// Indicator of `R(a, b) ∪ R(b, a)`. Both colours must share one grid.
pub fn symmetrize_colour_blind(a: f64, b: f64, grid: &Grid2D) -> Result<DualFunction> {
    if grid.x_atoms != grid.y_atoms {
        return Err(Error::AsymmetricGrids);
    }
    let ab = rectangle_indicator(a, b, grid);
    let ba = rectangle_indicator(b, a, grid);
    let values = ab.values.zip_map(&ba.values, f64::max);
    Ok(DualFunction { values, scale: ab.scale })
}

/// `D_h`-orthonormal basis of the additive functions `f(x) + g(y)`, constant first.
fn additive_basis(grid: &Grid2D) -> Result<Vec<Vector>> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let n = grid.len();
    let mut raw = vec![Vector::from_element(n, 1.0)];
    for i in 0..nx.saturating_sub(1) {
        raw.push(Vector::from_fn(n, |k, _| if k / ny == i { 1.0 } else { 0.0 }));
    }
    for j in 0..ny.saturating_sub(1) {
        raw.push(Vector::from_fn(n, |k, _| if k % ny == j { 1.0 } else { 0.0 }));
    }
    weighted_gram_schmidt(&raw, &grid.flat_probs())
        .ok_or_else(|| Error::InvalidInput("additive functions are dependent on this grid".into()))
}

/// `Π = I − D_h Σ_k a_k a_kᵀ` over an orthonormal basis `a_k` of the additive
/// functions. Every row and column sum of `Π Δw` is zero, which ties the
/// cumulative field down along both far edges.
pub fn pillow_projection(grid: &Grid2D) -> Result<LinearOperator> {
    let n = grid.len();
    let h = grid.flat_probs();
    let mut sum = Matrix::zeros(n, n);
    for a in additive_basis(grid)? {
        sum += &a * a.transpose();
    }
    let m = Matrix::identity(n, n) - Matrix::from_diagonal(&h) * sum;
    Ok(LinearOperator::new(m, OperatorRole::Projection, Some(h)))
}

pub fn pillow_increments(dw: &Vector, grid: &Grid2D) -> Result<Vector> {
    if dw.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), actual: dw.len() });
    }
    pillow_projection(grid)?.apply(dw)
}

/// Cumulative field `C_ij = Σ_{i' ≤ i, j' ≤ j} v_{i'j'}`.
pub fn cumulative_field(flat: &Vector, nx: usize, ny: usize) -> Result<Matrix> {
    if flat.len() != nx * ny {
        return Err(Error::DimensionMismatch { expected: nx * ny, actual: flat.len() });
    }
    let mut c = Matrix::zeros(nx, ny);
    for i in 0..nx {
        for j in 0..ny {
            let mut v = flat[i * ny + j];
            if i > 0 {
                v += c[(i - 1, j)];
            }
            if j > 0 {
                v += c[(i, j - 1)];
            }
            if i > 0 && j > 0 {
                v -= c[(i - 1, j - 1)];
            }
            c[(i, j)] = v;
        }
    }
    Ok(c)
}

/// Largest absolute cumulative value on the last row and last column.
pub fn edge_defect(flat: &Vector, nx: usize, ny: usize) -> Result<f64> {
    let c = cumulative_field(flat, nx, ny)?;
    let row = c.row(nx - 1).transpose();
    let col = c.column(ny - 1).into_owned();
    Ok(max_abs_vec(&row).max(max_abs_vec(&col)))
}

/// `V = W − F(x) W(∞, y) − G(y) W(x, ∞) + F(x) G(y) W(∞, ∞)` on the cumulative
/// field, with marginal CDFs `F`, `G` as coefficients.
pub fn pillow_formula(dw: &Vector, grid: &Grid2D) -> Result<Matrix> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let w = cumulative_field(dw, nx, ny)?;
    let f = crate::operators::accumulate(grid.marginal_x());
    let g = crate::operators::accumulate(grid.marginal_y());
    Ok(Matrix::from_fn(nx, ny, |i, j| {
        w[(i, j)] - f[i] * w[(nx - 1, j)] - g[j] * w[(i, ny - 1)] + f[i] * g[j] * w[(nx - 1, ny - 1)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use crate::rng::ReplicateRng;
    use proptest::prelude::*;

    fn independent(px: &[f64], py: &[f64]) -> Grid2D {
        let x = DiscreteDistribution::new((0..px.len()).map(|i| i as f64).collect(), px.to_vec(), 0.0).unwrap();
        let y = DiscreteDistribution::new((0..py.len()).map(|i| i as f64).collect(), py.to_vec(), 0.0).unwrap();
        Grid2D::independent(&x, &y).unwrap()
    }

    #[test]
    fn flatten_examples() {
        assert_eq!(flatten_2d(0, 0, 3).unwrap(), 0);
        assert_eq!(flatten_2d(2, 2, 3).unwrap(), 8);
        assert_eq!(unflatten_2d(4, 3).unwrap(), (1, 1));
        assert!(flatten_2d(3, 0, 3).is_err());
        assert!(unflatten_2d(9, 3).is_err());
    }

    #[test]
    fn sym_index_map_is_bijective() {
        for n in 1..=50 {
            let map = SymIndexMap::new(n);
            let mut seen = vec![false; map.len()];
            for i in 0..n {
                for j in 0..n {
                    let k = map.index(i, j).unwrap();
                    assert_eq!(k, map.index(j, i).unwrap());
                    seen[k] = true;
                    let (a, b) = map.pair(k).unwrap();
                    assert_eq!((a, b), (i.min(j), i.max(j)));
                }
            }
            assert!(seen.iter().all(|s| *s), "N={n}");
        }
    }

    #[test]
    fn fold_sums_swapped_cells() {
        let map = SymIndexMap::new(2);
        let folded = map.fold(&Vector::from_vec(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(folded, Vector::from_vec(vec![1.0, 5.0, 4.0]));
    }

    #[test]
    fn rectangle_examples() {
        let g = independent(&[0.2, 0.3, 0.5], &[0.3, 0.3, 0.4]);
        assert_eq!(rectangle_indicator(-1.0, -1.0, &g).values, Vector::zeros(9));
        assert_eq!(rectangle_indicator(5.0, 5.0, &g).values, Vector::from_element(9, 1.0));
        let r = rectangle_indicator(1.0, 0.0, &g).values;
        let ones: Vec<usize> = (0..9).filter(|&k| r[k] == 1.0).collect();
        assert_eq!(ones, vec![flatten_2d(0, 0, 3).unwrap(), flatten_2d(1, 0, 3).unwrap()]);
    }

    #[test]
    fn symmetrization_matches_union_oracle() {
        let g = independent(&[0.25; 4], &[0.25; 4]);
        let pts: Vec<f64> = vec![-1.0, 0.0, 1.0, 2.0, 3.0, 4.0];
        for &a in &pts {
            for &b in &pts {
                let s = symmetrize_colour_blind(a, b, &g).unwrap().values;
                for i in 0..4 {
                    for j in 0..4 {
                        let (x, y) = (i as f64, j as f64);
                        let union = (x <= a && y <= b) || (x <= b && y <= a);
                        assert_eq!(s[i * 4 + j] == 1.0, union);
                        assert_eq!(s[i * 4 + j], s[j * 4 + i]);
                    }
                }
                assert_eq!(s, symmetrize_colour_blind(b, a, &g).unwrap().values);
            }
            assert_eq!(symmetrize_colour_blind(a, a, &g).unwrap().values, rectangle_indicator(a, a, &g).values);
        }
    }

    #[test]
    fn asymmetric_grids_are_rejected() {
        let x = DiscreteDistribution::new(vec![0.0, 1.0], vec![0.5, 0.5], 0.0).unwrap();
        let y = DiscreteDistribution::new(vec![0.0, 2.0], vec![0.5, 0.5], 0.0).unwrap();
        let g = Grid2D::independent(&x, &y).unwrap();
        assert!(matches!(symmetrize_colour_blind(0.0, 1.0, &g), Err(Error::AsymmetricGrids)));
    }

    #[test]
    fn pillow_zero_in_zero_out() {
        let g = independent(&[0.2, 0.3, 0.5], &[0.3, 0.3, 0.4]);
        assert_eq!(pillow_increments(&Vector::zeros(9), &g).unwrap(), Vector::zeros(9));
        assert!(pillow_increments(&Vector::zeros(8), &g).is_err());
    }

    #[test]
    fn pillow_matches_anchoring_formula_under_independence() {
        let g = independent(&[0.2, 0.3, 0.5], &[0.1, 0.3, 0.2, 0.4]);
        let mut rng = ReplicateRng::new(2, 0);
        let dw = rng.normal_vector(12).component_mul(&g.flat_probs().map(f64::sqrt));
        let v = pillow_increments(&dw, &g).unwrap();
        let c = cumulative_field(&v, 3, 4).unwrap();
        assert!(max_abs(&(c - pillow_formula(&dw, &g).unwrap())) < 1e-12);
    }

    #[test]
    fn pillow_covariance_factorizes_under_independence() {
        let px = [0.2, 0.3, 0.5];
        let py = [0.1, 0.3, 0.2, 0.4];
        let g = independent(&px, &py);
        let pi = pillow_projection(&g).unwrap();
        let cov = pi.matrix() * Matrix::from_diagonal(&g.flat_probs()) * pi.matrix().transpose();
        let fx = crate::operators::accumulate(&Vector::from_column_slice(&px));
        let gy = crate::operators::accumulate(&Vector::from_column_slice(&py));
        for (a, b, a2, b2) in [(0, 1, 1, 2), (1, 0, 0, 2), (1, 1, 1, 1)] {
            let r1 = rectangle_indicator(a as f64, b as f64, &g).values;
            let r2 = rectangle_indicator(a2 as f64, b2 as f64, &g).values;
            let got = r1.dot(&(&cov * r2));
            let want = (fx[a.min(a2)] - fx[a] * fx[a2]) * (gy[b.min(b2)] - gy[b] * gy[b2]);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    proptest! {
        #[test]
        fn pillow_is_tied_down(seed in 0u64..10_000, nx in 2usize..7, ny in 2usize..7) {
            let mut rng = ReplicateRng::new(seed, 0);
            let h = crate::rng::random_probabilities(&mut rng, nx * ny);
            let probs = Matrix::from_fn(nx, ny, |i, j| h[i * ny + j]);
            let g = Grid2D::new((0..nx).map(|i| i as f64).collect(), (0..ny).map(|j| j as f64).collect(), probs).unwrap();
            let dw = rng.normal_vector(nx * ny).component_mul(&h.map(f64::sqrt));
            let v = pillow_increments(&dw, &g).unwrap();
            prop_assert!(edge_defect(&v, nx, ny).unwrap() < 1e-10);
        }
    }
}
