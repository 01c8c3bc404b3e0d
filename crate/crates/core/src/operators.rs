//! Projection, reflection, embedding and rotation matrices.
//!
//! All operators are dense `N × N`. Weighted operators are adapted to a diagonal
//! weight `D_p` and preserve (or project in) the inner product `⟨a, b⟩_P = aᵀ D_p b`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{max_abs, weighted_dot, weighted_norm, Matrix, Vector};
use crate::scores::ScoreSet;

/// Default max-norm tolerance for operator identities.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Reflections need `⟨a, b⟩ < 1 − DEGENERATE_GAP`.
pub const DEGENERATE_GAP: f64 = 1e-12;
/// Inside the rotation recursion, steps with `‖q_j − L̃s_j‖_P` below this are identity.
pub const ALIGNMENT_TOL: f64 = 1e-10;
/// Orthonormality tolerance accepted for score sets.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorRole {
    Projection,
    Reflection,
    Embedding,
    Rotation,
    Accumulation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    matrix: Matrix,
    role: OperatorRole,
    /// The `p` of `D_p` this operator is adapted to; `None` for Euclidean operators.
    weight: Option<Vector>,
}

impl LinearOperator {
    pub fn new(matrix: Matrix, role: OperatorRole, weight: Option<Vector>) -> Self {
        assert!(matrix.is_square(), "operators are square");
        LinearOperator { matrix, role, weight }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn role(&self) -> OperatorRole {
        self.role
    }

    pub fn weight(&self) -> Option<&Vector> {
        self.weight.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, v: &Vector) -> Result<Vector> {
        check_len(self.dim(), v.len())?;
        Ok(&self.matrix * v)
    }

    pub fn apply_transpose(&self, v: &Vector) -> Result<Vector> {
        check_len(self.dim(), v.len())?;
        Ok(self.matrix.tr_mul(v))
    }

    fn weight_matrix(&self) -> Matrix {
        match &self.weight {
            Some(w) => Matrix::from_diagonal(w),
            None => Matrix::identity(self.dim(), self.dim()),
        }
    }

    /// Max-norm violation of the identities implied by the role:
    /// projections are idempotent, reflections are involutions preserving the
    /// weighted norm, rotations preserve the weighted norm.
    pub fn invariant_defect(&self) -> f64 {
        let m = &self.matrix;
        let n = self.dim();
        match self.role {
            OperatorRole::Projection => max_abs(&(m * m - m)),
            OperatorRole::Reflection => {
                let d = self.weight_matrix();
                let inv = max_abs(&(m * m - Matrix::identity(n, n)));
                let iso = max_abs(&(m.transpose() * &d * m - &d));
                inv.max(iso)
            }
            OperatorRole::Rotation => {
                let d = self.weight_matrix();
                max_abs(&(m.transpose() * &d * m - d))
            }
            OperatorRole::Embedding | OperatorRole::Accumulation => 0.0,
        }
    }

    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let defect = self.invariant_defect();
        if defect <= tol {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("{:?} operator violates its identities by {defect:e}", self.role)))
        }
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

fn check_probabilities(p: &Vector) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("probabilities must be positive and finite".into()));
    }
    let s = p.sum();
    if (s - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!("probabilities sum to {s}, not 1")));
    }
    Ok(())
}

/// `π_{√p} = I − √p √pᵀ`: the Euclidean projection perpendicular to `√p`.
pub fn pi_sqrt(p: &Vector) -> Result<LinearOperator> {
    check_probabilities(p)?;
    let root = p.map(f64::sqrt);
    let n = p.len();
    let m = Matrix::identity(n, n) - &root * root.transpose();
    Ok(LinearOperator::new(m, OperatorRole::Projection, None))
}

/// `Π = I − D_p Σ_k q_k q_kᵀ`, projecting out the score directions.
pub fn big_pi(p: &Vector, scores: &ScoreSet) -> Result<LinearOperator> {
    check_probabilities(p)?;
    let n = p.len();
    check_len(n, scores.n_cells())?;
    let defect = crate::linalg::orthonormality_defect(scores.vectors(), p);
    if defect > ORTHONORMAL_TOL {
        return Err(Error::NonOrthonormalScores(defect));
    }
    let mut sum = Matrix::zeros(n, n);
    for q in scores.vectors() {
        sum += q * q.transpose();
    }
    let m = Matrix::identity(n, n) - Matrix::from_diagonal(p) * sum;
    Ok(LinearOperator::new(m, OperatorRole::Projection, Some(p.clone())))
}

/// `π̂_{√p} = I − Σ_k (D_p^{1/2} q_k)(D_p^{1/2} q_k)ᵀ`: the Euclidean projection
/// perpendicular to `√p` and to every normalized score direction.
pub fn pi_hat_sqrt(p: &Vector, scores: &ScoreSet) -> Result<LinearOperator> {
    check_probabilities(p)?;
    let n = p.len();
    check_len(n, scores.n_cells())?;
    let root = p.map(f64::sqrt);
    let mut m = Matrix::identity(n, n);
    for q in scores.vectors() {
        let u = q.component_mul(&root);
        m -= &u * u.transpose();
    }
    Ok(LinearOperator::new(m, OperatorRole::Projection, None))
}

/// Reflection in the hyperplane `P`-orthogonal to `a − b`, which swaps `a` and
/// `b` when they have equal weighted norm. `weights = None` means Euclidean.
fn swap_reflection(a: &Vector, b: &Vector, weights: Option<&Vector>) -> Matrix {
    let n = a.len();
    let d = a - b;
    let (norm2, dw) = match weights {
        Some(w) => (weighted_dot(&d, &d, w), d.component_mul(w)),
        None => (d.dot(&d), d.clone()),
    };
    // 2/‖a−b‖² equals 1/(1−⟨a,b⟩) for unit vectors
    let c = 2.0 / norm2;
    Matrix::identity(n, n) - (&d * dw.transpose()) * c
}

/// `U₀ = I − c₀ (a − b)(a − b)ᵀ` with `c₀ = 1/(1 − ⟨a, b⟩)`, for Euclidean unit
/// vectors `a`, `b`.
pub fn reflection_u0(a: &Vector, b: &Vector) -> Result<LinearOperator> {
    check_len(a.len(), b.len())?;
    for v in [a, b] {
        if (v.norm() - 1.0).abs() > IDENTITY_TOL {
            return Err(Error::InvalidInput(format!("vector norm {} is not 1", v.norm())));
        }
    }
    let inner = a.dot(b);
    if inner >= 1.0 - DEGENERATE_GAP {
        return Err(Error::DegenerateReflection(inner));
    }
    Ok(LinearOperator::new(swap_reflection(a, b, None), OperatorRole::Reflection, None))
}

/// `U_{ξ,η} = I − c (ξ − η)(ξ − η)ᵀ D_p` with `c = 1/(1 − ⟨ξ, η⟩_P)`.
pub fn reflection_weighted(xi: &Vector, eta: &Vector, p: &Vector) -> Result<LinearOperator> {
    check_len(p.len(), xi.len())?;
    check_len(p.len(), eta.len())?;
    check_probabilities(p)?;
    for v in [xi, eta] {
        let norm = weighted_norm(v, p);
        if (norm - 1.0).abs() > IDENTITY_TOL {
            return Err(Error::InvalidInput(format!("P-norm {norm} is not 1")));
        }
    }
    let inner = weighted_dot(xi, eta, p);
    if inner >= 1.0 - DEGENERATE_GAP {
        return Err(Error::DegenerateReflection(inner));
    }
    Ok(LinearOperator::new(swap_reflection(xi, eta, Some(p)), OperatorRole::Reflection, Some(p.clone())))
}

/// `L = D_r^{1/2} D_p^{-1/2}`, carrying `L²_R` isometrically into `L²_P`.
pub fn embed_l(p: &Vector, r: &Vector) -> Result<LinearOperator> {
    check_len(p.len(), r.len())?;
    check_probabilities(p)?;
    check_probabilities(r)?;
    let diag = r.zip_map(p, |ri, pi| (ri / pi).sqrt());
    Ok(LinearOperator::new(Matrix::from_diagonal(&diag), OperatorRole::Embedding, Some(p.clone())))
}

/// `V_K` with `V_K L s_k = q_k` for every `k` and `V_Kᵀ D_p V_K = D_p`, built as
/// the product of reflections `W_K ⋯ W_0`, `W_j = U_{q_j, V_{j−1} L s_j}`.
/// A step whose vectors are already aligned contributes the identity.
pub fn rotation_vk(q_set: &ScoreSet, s_set: &ScoreSet, p: &Vector, r: &Vector) -> Result<LinearOperator> {
    let n = p.len();
    if q_set.k() != s_set.k() {
        return Err(Error::InvalidInput(format!("score sets differ in dimension: K={} vs K={}", q_set.k(), s_set.k())));
    }
    check_len(n, q_set.n_cells())?;
    check_len(n, s_set.n_cells())?;
    for (set, w) in [(q_set, p), (s_set, r)] {
        let defect = crate::linalg::orthonormality_defect(set.vectors(), w);
        if defect > ORTHONORMAL_TOL {
            return Err(Error::NonOrthonormalScores(defect));
        }
    }
    let l = embed_l(p, r)?;
    let l_diag = l.matrix().diagonal();
    let mut v = Matrix::identity(n, n);
    for (q, s) in q_set.vectors().iter().zip(s_set.vectors()) {
        let target = &v * s.component_mul(&l_diag);
        let d = q - &target;
        let norm2 = weighted_dot(&d, &d, p);
        if norm2.sqrt() < ALIGNMENT_TOL {
            continue;
        }
        // W v = v − (2/‖d‖²) d (dᵀ D_p v)
        let row = d.component_mul(p).transpose() * &v;
        v -= (&d * row) * (2.0 / norm2);
    }
    Ok(LinearOperator::new(v, OperatorRole::Rotation, Some(p.clone())))
}

/// Prefix sums: `out_j = Σ_{k ≤ j} v_k`, i.e. `J v`.
pub fn accumulate(v: &Vector) -> Vector {
    let mut acc = 0.0;
    v.map(|x| {
        acc += x;
        acc
    })
}

/// The lower-triangular all-ones matrix `J`.
pub fn accumulation_matrix(n: usize) -> LinearOperator {
    let m = Matrix::from_fn(n, n, |i, j| if j <= i { 1.0 } else { 0.0 });
    LinearOperator::new(m, OperatorRole::Accumulation, None)
}
