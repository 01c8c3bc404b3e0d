//! Score vectors, the information matrix and the `D_p`-orthonormal score set.

use nalgebra::SymmetricEigen;

use crate::discretization::{cell_probabilities, Grid};
use crate::error::{Error, Result};
use crate::family::ParametricFamily;
use crate::linalg::{orthonormality_defect, weighted_dot, weighted_norm, Matrix, Vector};
use crate::operators::ORTHONORMAL_TOL;

const MAX_CONDITION: f64 = 1e12;
/// Beyond this the derivatives are inconsistent with `Σ p_j = 1`, not just noisy.
const SCORE_SUM_HARD: f64 = 1e-6;

/// `{q₀ = 1, q₁, …, q_K}` with `q_jᵀ D_p q_k = δ_jk`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    vectors: Vec<Vector>,
    weights: Vector,
}

impl ScoreSet {
    pub fn new(vectors: Vec<Vector>, weights: Vector) -> Result<Self> {
        let n = weights.len();
        if vectors.is_empty() {
            return Err(Error::InvalidInput("a score set needs at least q₀".into()));
        }
        if let Some(bad) = vectors.iter().find(|v| v.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, actual: bad.len() });
        }
        if vectors[0].iter().any(|x| (x - 1.0).abs() > 1e-12) {
            return Err(Error::InvalidInput("q₀ must be the all-ones vector".into()));
        }
        let defect = orthonormality_defect(&vectors, &weights);
        if !(defect <= ORTHONORMAL_TOL) {
            return Err(Error::NonOrthonormalScores(defect));
        }
        Ok(ScoreSet { vectors, weights })
    }

    #[cfg(test)]
    pub(crate) fn unchecked(vectors: Vec<Vector>, weights: Vector) -> Self {
        ScoreSet { vectors, weights }
    }

    /// The `K = 0` set `{q₀}`.
    pub fn constant(weights: Vector) -> Self {
        let n = weights.len();
        ScoreSet { vectors: vec![Vector::from_element(n, 1.0)], weights }
    }

    pub fn k(&self) -> usize {
        self.vectors.len() - 1
    }

    pub fn n_cells(&self) -> usize {
        self.weights.len()
    }

    pub fn vectors(&self) -> &[Vector] {
        &self.vectors
    }

    pub fn weights(&self) -> &Vector {
        &self.weights
    }

    /// `Σ_{k≥1} q_k q_kᵀ D_p`: the `D_p`-orthogonal projector onto the span of the
    /// normalized scores, independent of how that span is parametrized.
    pub fn score_span_projector(&self) -> Matrix {
        let n = self.n_cells();
        let mut m = Matrix::zeros(n, n);
        for q in &self.vectors[1..] {
            m += q * q.component_mul(&self.weights).transpose();
        }
        m
    }
}

/// How `∂p_j/∂θ_k` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMethod {
    /// Analytic when the family provides a CDF gradient, else finite differences.
    Auto,
    Analytic,
    FiniteDifference,
}

/// Raw scores `Q_k` with entries `(∂p_j/∂θ_k) / p_j`, one vector per parameter.
pub fn raw_scores(family: &dyn ParametricFamily, theta: &[f64], grid: &Grid) -> Result<Vec<Vector>> {
    raw_scores_with(family, theta, grid, ScoreMethod::Auto)
}

pub fn raw_scores_with(
    family: &dyn ParametricFamily,
    theta: &[f64],
    grid: &Grid,
    method: ScoreMethod,
) -> Result<Vec<Vector>> {
    let k = family.param_dim();
    let p = cell_probabilities(family, theta, grid)?;
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut dp = match method {
        ScoreMethod::FiniteDifference => fd_cell_gradient(family, theta, grid)?,
        ScoreMethod::Analytic => analytic_cell_gradient(family, theta, grid)
            .ok_or_else(|| Error::ScoreUnavailable(format!("{} has no analytic gradient", family.name())))?,
        ScoreMethod::Auto => match analytic_cell_gradient(family, theta, grid) {
            Some(g) => g,
            None => fd_cell_gradient(family, theta, grid)?,
        },
    };
    for (col, mut d) in dp.column_iter_mut().enumerate() {
        let total: f64 = d.sum();
        if total.abs() > SCORE_SUM_HARD {
            return Err(Error::ScoreUnavailable(format!(
                "derivatives of the cell probabilities for parameter {col} sum to {total:e}"
            )));
        }
        // remove the residual so that q₀ᵀ D_p Q_k vanishes to rounding
        for (j, v) in d.iter_mut().enumerate() {
            *v -= total * p[j];
        }
    }
    Ok((0..k).map(|c| Vector::from_fn(p.len(), |j, _| dp[(j, c)] / p[j])).collect())
}

/// `∂p_j/∂θ_k` from the family's CDF gradient at the interior edges; the floor
/// and `+∞` contribute nothing, matching the cell convention.
fn analytic_cell_gradient(family: &dyn ParametricFamily, theta: &[f64], grid: &Grid) -> Option<Matrix> {
    let k = family.param_dim();
    let atoms = grid.atoms();
    let n = atoms.len();
    let mut at_edges = Vec::with_capacity(n + 1);
    at_edges.push(vec![0.0; k]);
    for &x in &atoms[1..] {
        let g = family.cdf_gradient(theta, x)?;
        if g.len() != k {
            return None;
        }
        at_edges.push(g);
    }
    at_edges.push(vec![0.0; k]);
    Some(Matrix::from_fn(n, k, |j, c| at_edges[j + 1][c] - at_edges[j][c]))
}

/// Central differences of the cell probabilities, step `cbrt(ε)·max(1, |θ_k|)`.
fn fd_cell_gradient(family: &dyn ParametricFamily, theta: &[f64], grid: &Grid) -> Result<Matrix> {
    let k = family.param_dim();
    let n = grid.n_cells();
    let base_step = f64::EPSILON.cbrt();
    let mut out = Matrix::zeros(n, k);
    for c in 0..k {
        let h = base_step * theta[c].abs().max(1.0);
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[c] += h;
        dn[c] -= h;
        let width = up[c] - dn[c];
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::ScoreUnavailable(format!("finite-difference step underflow for parameter {c}")));
        }
        let unavailable = |e: Error| Error::ScoreUnavailable(format!("cannot perturb parameter {c}: {e}"));
        let pu = cell_probabilities(family, &up, grid).map_err(unavailable)?;
        let pd = cell_probabilities(family, &dn, grid).map_err(unavailable)?;
        for j in 0..n {
            out[(j, c)] = (pu[j] - pd[j]) / width;
        }
    }
    Ok(out)
}

/// `Γ = BᵀB` with `Γ_jk = Q_jᵀ D_p Q_k`; symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationMatrix {
    matrix: Matrix,
}

impl InformationMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn information_matrix(scores: &[Vector], p: &Vector) -> Result<InformationMatrix> {
    let k = scores.len();
    let m = Matrix::from_fn(k, k, |a, b| weighted_dot(&scores[a], &scores[b], p));
    check_spd(&m)?;
    Ok(InformationMatrix { matrix: m })
}

fn check_spd(m: &Matrix) -> Result<Option<SymmetricEigen<f64, nalgebra::Dyn>>> {
    let k = m.nrows();
    if !m.is_square() {
        return Err(Error::SingularInformation("matrix is not square".into()));
    }
    let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    if crate::linalg::max_abs(&(m - m.transpose())) > 1e-12 * scale {
        return Err(Error::SingularInformation("matrix is not symmetric".into()));
    }
    if k == 0 {
        return Ok(None);
    }
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if !(min > 0.0) {
        return Err(Error::SingularInformation(format!("smallest eigenvalue {min:e}")));
    }
    if max / min > MAX_CONDITION {
        return Err(Error::SingularInformation(format!("condition number {:e}", max / min)));
    }
    Ok(Some(eig))
}

/// `Γ^{-1/2}` via the symmetric eigendecomposition.
pub fn inv_sqrt_psd(gamma: &Matrix) -> Result<Matrix> {
    let Some(eig) = check_spd(gamma)? else {
        return Ok(Matrix::zeros(0, 0));
    };
    let d = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let v = &eig.eigenvectors;
    let m = v * Matrix::from_diagonal(&d) * v.transpose();
    // symmetrize away rounding
    Ok((&m + m.transpose()) * 0.5)
}

/// `(q₁ … q_K) = (Q₁ … Q_K) Γ^{-1/2}`, prefixed by `q₀ = 1`, followed by one
/// Gram–Schmidt pass in the `D_p` inner product.
pub fn normalize_scores(scores: &[Vector], gamma: &InformationMatrix, p: &Vector) -> Result<ScoreSet> {
    let n = p.len();
    let k = scores.len();
    if gamma.dim() != k {
        return Err(Error::DimensionMismatch { expected: k, actual: gamma.dim() });
    }
    let mut out = vec![Vector::from_element(n, 1.0)];
    if k > 0 {
        let root = inv_sqrt_psd(gamma.matrix())?;
        for c in 0..k {
            let mut q = Vector::zeros(n);
            for (a, s) in scores.iter().enumerate() {
                q.axpy(root[(a, c)], s, 1.0);
            }
            out.push(q);
        }
    }
    for j in 1..out.len() {
        let (done, rest) = out.split_at_mut(j);
        let q = &mut rest[0];
        for e in done.iter() {
            let c = weighted_dot(q, e, p);
            q.axpy(-c, e, 1.0);
        }
        let norm = weighted_norm(q, p);
        *q /= norm;
    }
    ScoreSet::new(out, p.clone())
}

/// Raw scores, information and normalized scores in one go. Returns the cell
/// probabilities alongside the score set.
pub fn score_set(family: &dyn ParametricFamily, theta: &[f64], grid: &Grid) -> Result<(Vector, ScoreSet)> {
    let p = Vector::from_vec(cell_probabilities(family, theta, grid)?);
    let raw = raw_scores(family, theta, grid)?;
    let gamma = information_matrix(&raw, &p)?;
    let set = normalize_scores(&raw, &gamma, &p)?;
    Ok((p, set))
}

/// Synthetic scores for a parameter-free target `r`: the powers `u⁰, …, u^K` of
/// the centred cell midpoints `u_j = 2(R(x_{j−1}) + r_j/2) − 1`, orthonormalized
/// in `D_r`.
pub fn polynomial_scores(r: &Vector, k: usize) -> Result<ScoreSet> {
    let n = r.len();
    if k >= n {
        return Err(Error::InvalidInput(format!("{k} synthetic scores do not fit in {n} cells")));
    }
    let mut cum = 0.0;
    let u = Vector::from_fn(n, |j, _| {
        let mid = cum + 0.5 * r[j];
        cum += r[j];
        2.0 * mid - 1.0
    });
    let mut out = vec![Vector::from_element(n, 1.0)];
    for deg in 1..=k {
        let mut q = u.map(|x| x.powi(deg as i32));
        // two passes: the monomials are far from orthogonal
        for _ in 0..2 {
            for e in &out {
                let c = weighted_dot(&q, e, r);
                q.axpy(-c, e, 1.0);
            }
        }
        let norm = weighted_norm(&q, r);
        if !(norm > 1e-10) {
            return Err(Error::InvalidInput("polynomial scores are degenerate on this grid".into()));
        }
        out.push(q / norm);
    }
    ScoreSet::new(out, r.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::build_equiprobable_grid;
    use crate::family::{Exponential, Normal, Tabulated};
    use crate::linalg::max_abs;

    fn bernoulli() -> Tabulated {
        Tabulated::new("bernoulli", vec![0.0, 1.0], 1, |t: &[f64]| vec![t[0], 1.0 - t[0]])
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn bernoulli_scores_information_and_normalization() {
        let f = bernoulli();
        let g = Grid::from_edges(vec![0.0, 1.0]).unwrap();
        let q = raw_scores(&f, &[0.5], &g).unwrap();
        assert_eq!(q.len(), 1);
        assert!((q[0][0] - 2.0).abs() < 1e-8 && (q[0][1] + 2.0).abs() < 1e-8);

        let p = v(&[0.5, 0.5]);
        // oracle: Σ Q_j² p_j = 4·½ + 4·½
        let oracle: f64 = q[0].iter().zip(p.iter()).map(|(a, b)| a * a * b).sum();
        let gamma = information_matrix(&q, &p).unwrap();
        assert!((gamma.matrix()[(0, 0)] - oracle).abs() < 1e-12);
        assert!((oracle - 4.0).abs() < 1e-7);

        let set = normalize_scores(&q, &gamma, &p).unwrap();
        let q1 = &set.vectors()[1];
        assert!((q1[0] - 1.0).abs() < 1e-8 && (q1[1] + 1.0).abs() < 1e-8);
        assert!((weighted_dot(q1, q1, &p) - 1.0).abs() < 1e-12);
        assert!(weighted_dot(&set.vectors()[0], q1, &p).abs() < 1e-12);
    }

    #[test]
    fn scores_are_orthogonal_to_constants() {
        let f = Normal::location_scale();
        let d = build_equiprobable_grid(&f, &[0.0, 1.0], 8, -9.0).unwrap();
        let p = Vector::from_vec(cell_probabilities(&f, &[0.2, 1.3], d.grid()).unwrap());
        let q = raw_scores(&f, &[0.2, 1.3], d.grid()).unwrap();
        let one = Vector::from_element(8, 1.0);
        for qk in &q {
            assert!(weighted_dot(qk, &one, &p).abs() < 1e-12);
        }
    }

    #[test]
    fn k_zero_has_no_scores() {
        let f = Exponential::fixed(1.0);
        let g = Grid::from_edges(vec![0.0, 1.0]).unwrap();
        assert!(raw_scores(&f, &[], &g).unwrap().is_empty());
        let p = v(&[0.4, 0.6]);
        let gamma = information_matrix(&[], &p).unwrap();
        let set = normalize_scores(&[], &gamma, &p).unwrap();
        assert_eq!(set.k(), 0);
        assert_eq!(set.vectors()[0], Vector::from_element(2, 1.0));
    }

    #[test]
    fn information_is_bilinear() {
        let p = v(&[0.2, 0.3, 0.5]);
        let q = vec![v(&[1.0, 2.0, -1.6])];
        let g1 = information_matrix(&q, &p).unwrap().matrix()[(0, 0)];
        let g2 = information_matrix(&[&q[0] * 2.0], &p).unwrap().matrix()[(0, 0)];
        assert!((g2 - 4.0 * g1).abs() < 1e-14);
    }

    #[test]
    fn duplicate_parameters_are_singular() {
        let p = v(&[0.2, 0.3, 0.5]);
        let q1 = v(&[1.0, 2.0, -1.6]);
        assert!(matches!(information_matrix(&[q1.clone(), q1], &p), Err(Error::SingularInformation(_))));
    }

    #[test]
    fn inv_sqrt_examples() {
        assert!(max_abs(&(inv_sqrt_psd(&Matrix::identity(3, 3)).unwrap() - Matrix::identity(3, 3))) < 1e-15);
        assert!((inv_sqrt_psd(&Matrix::from_element(1, 1, 4.0)).unwrap()[(0, 0)] - 0.5).abs() < 1e-15);
        let g = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 8.0]);
        let r = inv_sqrt_psd(&g).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[1.0 / 2f64.sqrt(), 0.0, 0.0, 1.0 / (2.0 * 2f64.sqrt())]);
        assert!(max_abs(&(&r - expected)) < 1e-15);
        let g = Matrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let r = inv_sqrt_psd(&g).unwrap();
        assert!(max_abs(&(&r * &g * &r - Matrix::identity(2, 2))) < 1e-10);
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let cases: Vec<(Box<dyn ParametricFamily>, Vec<f64>, f64)> = vec![
            (Box::new(Exponential::rate()), vec![2.0], 0.0),
            (Box::new(Normal::location(1.5)), vec![0.7], -20.0),
            (Box::new(Normal::location_scale()), vec![-0.3, 0.8], -20.0),
        ];
        for (f, theta, floor) in cases {
            let d = build_equiprobable_grid(f.as_ref(), &theta, 12, floor).unwrap();
            let a = raw_scores_with(f.as_ref(), &theta, d.grid(), ScoreMethod::Analytic).unwrap();
            let n = raw_scores_with(f.as_ref(), &theta, d.grid(), ScoreMethod::FiniteDifference).unwrap();
            for (qa, qn) in a.iter().zip(&n) {
                for (x, y) in qa.iter().zip(qn.iter()) {
                    assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{} analytic {x} fd {y}", f.name());
                }
            }
        }
    }

    #[test]
    fn fd_step_fails_outside_admissible_set() {
        // rate 1e-7: θ − h < 0 is not admissible
        let g = Grid::from_edges(vec![0.0, 1.0]).unwrap();
        let err = raw_scores_with(&Exponential::rate(), &[1e-7], &g, ScoreMethod::FiniteDifference);
        assert!(matches!(err, Err(Error::ScoreUnavailable(_))));
    }

    #[test]
    fn polynomial_target_scores_are_orthonormal() {
        let r = Vector::from_element(10, 0.1);
        let s = polynomial_scores(&r, 3).unwrap();
        assert!(orthonormality_defect(s.vectors(), &r) < 1e-12);
        assert!(polynomial_scores(&r, 10).is_err());
    }
}
