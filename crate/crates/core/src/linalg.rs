//! Small dense helpers shared by the operator and score modules.

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// `⟨a, b⟩_w = Σ a_j w_j b_j`.
pub fn weighted_dot(a: &Vector, b: &Vector, weights: &Vector) -> f64 {
    a.iter().zip(b.iter()).zip(weights.iter()).map(|((x, y), w)| x * w * y).sum()
}

pub fn weighted_norm(a: &Vector, weights: &Vector) -> f64 {
    weighted_dot(a, a, weights).sqrt()
}

/// Largest absolute entry.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_vec(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn diag(v: &Vector) -> Matrix {
    Matrix::from_diagonal(v)
}

/// Gram matrix `G_jk = ⟨v_j, v_k⟩_w`.
pub fn weighted_gram(vectors: &[Vector], weights: &Vector) -> Matrix {
    let m = vectors.len();
    Matrix::from_fn(m, m, |j, k| weighted_dot(&vectors[j], &vectors[k], weights))
}

/// Modified Gram–Schmidt in the `w`-weighted inner product. The first vector keeps
/// its direction; every output has unit weighted norm. Returns `None` when a vector
/// is (numerically) dependent on its predecessors.
pub fn weighted_gram_schmidt(vectors: &[Vector], weights: &Vector) -> Option<Vec<Vector>> {
    let mut out: Vec<Vector> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let scale = weighted_norm(v, weights);
        let mut u = v.clone();
        for e in &out {
            let c = weighted_dot(&u, e, weights);
            u.axpy(-c, e, 1.0);
        }
        let norm = weighted_norm(&u, weights);
        if !(norm > 1e-10 * scale.max(f64::MIN_POSITIVE)) {
            return None;
        }
        out.push(u / norm);
    }
    Some(out)
}

/// Deviation of a weighted Gram matrix from the identity, in max-norm.
pub fn orthonormality_defect(vectors: &[Vector], weights: &Vector) -> f64 {
    let g = weighted_gram(vectors, weights);
    max_abs(&(g - Matrix::identity(vectors.len(), vectors.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_schmidt_orthonormalizes_in_weight() {
        let w = Vector::from_vec(vec![0.2, 0.3, 0.5]);
        let vs = vec![
            Vector::from_element(3, 1.0),
            Vector::from_vec(vec![1.0, 2.0, 3.0]),
            Vector::from_vec(vec![1.0, 4.0, 9.0]),
        ];
        let q = weighted_gram_schmidt(&vs, &w).unwrap();
        assert!(orthonormality_defect(&q, &w) < 1e-13);
        // first vector keeps direction, and 1 has unit norm under probabilities
        assert!((q[0][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gram_schmidt_rejects_dependent_input() {
        let w = Vector::from_vec(vec![0.5, 0.5]);
        let vs = vec![Vector::from_vec(vec![1.0, 2.0]), Vector::from_vec(vec![2.0, 4.0])];
        assert!(weighted_gram_schmidt(&vs, &w).is_none());
    }
}
