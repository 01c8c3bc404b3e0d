//! Increment vectors of Brownian motion, projected (bridge-like) processes and
//! empirical processes in time `P`, their function-parametric evaluation and
//! the rotation of one projected process onto another.

use std::sync::Arc;

use crate::discretization::{CellCounts, DiscreteDistribution};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::operators::{accumulate, LinearOperator, OperatorRole};
use crate::rng::ReplicateRng;

/// Two scales are the same when their cell masses agree to this tolerance.
const SCALE_TOL: f64 = 1e-12;

/// The cell masses a process (or a test function) lives over. Cheap to clone.
#[derive(Debug, Clone)]
pub struct TimeScale(Arc<Vector>);

impl TimeScale {
    pub fn new(p: Vector) -> Self {
        TimeScale(Arc::new(p))
    }

    pub fn from_distribution(dist: &DiscreteDistribution) -> Self {
        TimeScale::new(dist.probs_vector())
    }

    pub fn probs(&self) -> &Vector {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl PartialEq for TimeScale {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.len() == other.len() && self.0.iter().zip(other.0.iter()).all(|(a, b)| (a - b).abs() <= SCALE_TOL))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessKind {
    Bm,
    Projected,
    Empirical,
    Rotated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessIncrements {
    pub values: Vector,
    pub scale: TimeScale,
    pub kind: ProcessKind,
}

impl ProcessIncrements {
    pub fn new(values: Vector, scale: TimeScale, kind: ProcessKind) -> Result<Self> {
        if values.len() != scale.len() {
            return Err(Error::DimensionMismatch { expected: scale.len(), actual: values.len() });
        }
        Ok(ProcessIncrements { values, scale, kind })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A test function `φ` tabulated at the grid points of its scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DualFunction {
    pub values: Vector,
    pub scale: TimeScale,
}

impl DualFunction {
    pub fn new(values: Vector, scale: TimeScale) -> Result<Self> {
        if values.len() != scale.len() {
            return Err(Error::DimensionMismatch { expected: scale.len(), actual: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("test function has non-finite values".into()));
        }
        Ok(DualFunction { values, scale })
    }

    /// `‖φ‖²_P = φᵀ D_p φ`.
    pub fn norm2(&self) -> f64 {
        crate::linalg::weighted_dot(&self.values, &self.values, self.scale.probs())
    }
}

/// `Δw_j = √p_j z_j` with `z` drawn from the `(seed, replicate_index)` stream.
pub fn simulate_bm_increments(scale: &TimeScale, seed: u64, replicate_index: u64) -> ProcessIncrements {
    let mut rng = ReplicateRng::new(seed, replicate_index);
    let z = rng.normal_vector(scale.len());
    bm_increments_from_normals(scale, &z).expect("lengths agree by construction")
}

pub fn bm_increments_from_normals(scale: &TimeScale, z: &Vector) -> Result<ProcessIncrements> {
    let values = z.zip_map(scale.probs(), |zj, pj| pj.sqrt() * zj);
    ProcessIncrements::new(values, scale.clone(), ProcessKind::Bm)
}

/// `Δv = Π Δw`.
pub fn project_increments(dw: &ProcessIncrements, pi: &LinearOperator) -> Result<ProcessIncrements> {
    if pi.role() != OperatorRole::Projection {
        return Err(Error::InvalidInput(format!("expected a projection, got {:?}", pi.role())));
    }
    if let Some(w) = pi.weight() {
        if TimeScale::new(w.clone()) != dw.scale {
            return Err(Error::SpaceMismatch);
        }
    }
    let values = pi.apply(&dw.values)?;
    ProcessIncrements::new(values, dw.scale.clone(), ProcessKind::Projected)
}

/// `(ν_j − n p̂_j)/√n`.
pub fn empirical_increments(counts: &CellCounts, p_hat: &TimeScale) -> Result<ProcessIncrements> {
    if counts.n_cells() != p_hat.len() {
        return Err(Error::DimensionMismatch { expected: p_hat.len(), actual: counts.n_cells() });
    }
    let n = counts.sample_size();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let nf = n as f64;
    let root = nf.sqrt();
    let values = Vector::from_fn(p_hat.len(), |j, _| (counts.counts()[j] as f64 - nf * p_hat.probs()[j]) / root);
    ProcessIncrements::new(values, p_hat.clone(), ProcessKind::Empirical)
}

/// `v(φ) = φᵀ Δv`.
pub fn eval_functional(phi: &DualFunction, dv: &ProcessIncrements) -> Result<f64> {
    if phi.values.len() != dv.values.len() {
        return Err(Error::DimensionMismatch { expected: dv.values.len(), actual: phi.values.len() });
    }
    if phi.scale != dv.scale {
        return Err(Error::SpaceMismatch);
    }
    Ok(phi.values.dot(&dv.values))
}

/// `φ_t(x_j) = 1{x_j < t}`.
pub fn heaviside(t: f64, dist: &DiscreteDistribution) -> DualFunction {
    let values = Vector::from_iterator(dist.n_cells(), dist.atoms().iter().map(|&x| if x < t { 1.0 } else { 0.0 }));
    DualFunction { values, scale: TimeScale::from_distribution(dist) }
}

/// Checks that `V_K` and `L` are adapted to `p` (the scale of `dv`) and that
/// `L` carries `r` (the scale of `ψ`) into `p`.
fn check_rotation_spaces(
    psi_scale: &TimeScale,
    vk: &LinearOperator,
    l: &LinearOperator,
    dv: &ProcessIncrements,
) -> Result<()> {
    let n = dv.len();
    for op in [vk, l] {
        if op.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: op.dim() });
        }
    }
    if psi_scale.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: psi_scale.len() });
    }
    for op in [vk, l] {
        match op.weight() {
            Some(w) if TimeScale::new(w.clone()) == dv.scale => {}
            _ => return Err(Error::SpaceMismatch),
        }
    }
    let p = dv.scale.probs();
    let implied_r = Vector::from_fn(n, |j, _| l.matrix()[(j, j)].powi(2) * p[j]);
    if TimeScale::new(implied_r) != *psi_scale {
        return Err(Error::SpaceMismatch);
    }
    Ok(())
}

/// `v_R^s(ψ) = v_P^q(V_K L ψ) = (V_K L ψ)ᵀ Δv_P`.
pub fn rotate_functional(
    psi: &DualFunction,
    vk: &LinearOperator,
    l: &LinearOperator,
    dv: &ProcessIncrements,
) -> Result<f64> {
    check_rotation_spaces(&psi.scale, vk, l, dv)?;
    let image = vk.apply(&l.apply(&psi.values)?)?;
    Ok(image.dot(&dv.values))
}

/// The rotated process itself, `L V_Kᵀ Δv_P`, as increments over `target`.
pub fn primal_rotation(
    dv: &ProcessIncrements,
    vk: &LinearOperator,
    l: &LinearOperator,
    target: &TimeScale,
) -> Result<ProcessIncrements> {
    check_rotation_spaces(target, vk, l, dv)?;
    let values = l.apply(&vk.apply_transpose(&dv.values)?)?;
    ProcessIncrements::new(values, target.clone(), ProcessKind::Rotated)
}

/// Prefix sums of the increments: the discretized path.
pub fn cumulative_path(dv: &ProcessIncrements) -> Vector {
    accumulate(&dv.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{diag, max_abs, max_abs_vec, Matrix};
    use crate::operators::{big_pi, embed_l, rotation_vk};
    use crate::rng::{random_orthonormal_set, random_probabilities};
    use crate::scores::ScoreSet;
    use proptest::prelude::*;

    fn scale(p: &[f64]) -> TimeScale {
        TimeScale::new(Vector::from_column_slice(p))
    }

    fn rotation_instance(seed: u64, n: usize, k: usize) -> (Vector, Vector, ScoreSet, ScoreSet) {
        let mut rng = ReplicateRng::new(seed, 0);
        let p = random_probabilities(&mut rng, n);
        let r = random_probabilities(&mut rng, n);
        let q = ScoreSet::new(random_orthonormal_set(&mut rng, &p, k), p.clone()).unwrap();
        let s = ScoreSet::new(random_orthonormal_set(&mut rng, &r, k), r.clone()).unwrap();
        (p, r, q, s)
    }

    #[test]
    fn zero_normals_give_zero_increments() {
        let ts = scale(&[0.2, 0.3, 0.5]);
        let dw = bm_increments_from_normals(&ts, &Vector::zeros(3)).unwrap();
        assert_eq!(dw.values, Vector::zeros(3));
        assert_eq!(dw.kind, ProcessKind::Bm);
    }

    #[test]
    fn simulation_is_seeded() {
        let ts = scale(&[0.25; 4]);
        assert_eq!(simulate_bm_increments(&ts, 3, 9), simulate_bm_increments(&ts, 3, 9));
        assert_ne!(simulate_bm_increments(&ts, 3, 9), simulate_bm_increments(&ts, 3, 10));
    }

    #[test]
    fn two_cell_bridge_projection() {
        let p = Vector::from_vec(vec![0.5, 0.5]);
        let pi = big_pi(&p, &ScoreSet::constant(p.clone())).unwrap();
        let want = Matrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!(max_abs(&(pi.matrix() - want)) < 1e-15);
        let dw = ProcessIncrements::new(Vector::from_vec(vec![3.0, 1.0]), TimeScale::new(p), ProcessKind::Bm).unwrap();
        let dv = project_increments(&dw, &pi).unwrap();
        assert_eq!(dv.values, Vector::from_vec(vec![1.0, -1.0]));
        assert!(cumulative_path(&dv)[1].abs() < 1e-12);
        assert_eq!(dv.kind, ProcessKind::Projected);
    }

    #[test]
    fn empirical_examples() {
        let ts = scale(&[0.5, 0.5]);
        let dv = empirical_increments(&CellCounts::new(vec![60, 40]), &ts).unwrap();
        assert!(max_abs_vec(&(dv.values - Vector::from_vec(vec![1.0, -1.0]))) < 1e-15);
        let exact = empirical_increments(&CellCounts::new(vec![50, 50]), &ts).unwrap();
        assert_eq!(exact.values, Vector::zeros(2));
        assert!(matches!(empirical_increments(&CellCounts::new(vec![0, 0]), &ts), Err(Error::EmptySample)));
    }

    #[test]
    fn heaviside_examples() {
        let dist = DiscreteDistribution::new(vec![0.0, 0.5, 0.9], vec![0.3, 0.3, 0.4], 0.0).unwrap();
        assert_eq!(heaviside(0.0, &dist).values, Vector::zeros(3));
        assert_eq!(heaviside(2.0, &dist).values, Vector::from_element(3, 1.0));
        assert_eq!(heaviside(0.5, &dist).values, Vector::from_vec(vec![1.0, 0.0, 0.0]));
    }

    #[test]
    fn functional_examples() {
        let p = Vector::from_vec(vec![0.2, 0.3, 0.5]);
        let ts = TimeScale::new(p.clone());
        let pi = big_pi(&p, &ScoreSet::constant(p.clone())).unwrap();
        let dw = ProcessIncrements::new(Vector::from_vec(vec![0.4, -1.1, 0.7]), ts.clone(), ProcessKind::Bm).unwrap();
        let dv = project_increments(&dw, &pi).unwrap();
        let ones = DualFunction::new(Vector::from_element(3, 1.0), ts.clone()).unwrap();
        assert!(eval_functional(&ones, &dv).unwrap().abs() < 1e-15);
        let e1 = DualFunction::new(Vector::from_vec(vec![0.0, 1.0, 0.0]), ts.clone()).unwrap();
        assert_eq!(eval_functional(&e1, &dv).unwrap(), dv.values[1]);
        let dist = DiscreteDistribution::new(vec![0.0, 1.0, 2.0], vec![0.2, 0.3, 0.5], 0.0).unwrap();
        let h = heaviside(1.5, &dist);
        assert!((eval_functional(&h, &dv).unwrap() - cumulative_path(&dv)[1]).abs() < 1e-15);
        let other = DualFunction::new(Vector::from_element(3, 1.0), scale(&[0.1, 0.1, 0.8])).unwrap();
        assert!(matches!(eval_functional(&other, &dv), Err(Error::SpaceMismatch)));
    }

    #[test]
    fn rotation_with_equal_scales_is_identity() {
        let (p, _, q, _) = rotation_instance(5, 6, 2);
        let vk = rotation_vk(&q, &q, &p, &p).unwrap();
        let l = embed_l(&p, &p).unwrap();
        let ts = TimeScale::new(p.clone());
        let dw = simulate_bm_increments(&ts, 1, 0);
        let dv = project_increments(&dw, &big_pi(&p, &q).unwrap()).unwrap();
        let out = primal_rotation(&dv, &vk, &l, &ts).unwrap();
        assert!(max_abs_vec(&(out.values - &dv.values)) < 1e-12);
        let psi = DualFunction::new(Vector::from_fn(6, |j, _| j as f64), ts).unwrap();
        let a = rotate_functional(&psi, &vk, &l, &dv).unwrap();
        assert!((a - eval_functional(&psi, &dv).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rotation_rejects_wrong_scale() {
        let (p, r, q, s) = rotation_instance(6, 5, 1);
        let vk = rotation_vk(&q, &s, &p, &r).unwrap();
        let l = embed_l(&p, &r).unwrap();
        let dv = simulate_bm_increments(&TimeScale::new(p.clone()), 1, 0);
        let wrong = DualFunction::new(Vector::from_element(5, 1.0), TimeScale::new(p)).unwrap();
        assert!(matches!(rotate_functional(&wrong, &vk, &l, &dv), Err(Error::SpaceMismatch)));
    }

    #[test]
    fn exact_rotated_covariance() {
        for seed in 0..20 {
            let n = 3 + (seed as usize % 10);
            let k = seed as usize % 3;
            let (p, r, q, s) = rotation_instance(seed, n, k);
            let vk = rotation_vk(&q, &s, &p, &r).unwrap();
            let l = embed_l(&p, &r).unwrap();
            let pi = big_pi(&p, &q).unwrap();
            let lhs = l.matrix() * vk.matrix().transpose() * pi.matrix() * diag(&p) * vk.matrix() * l.matrix();
            let dr = diag(&r);
            let mut rhs = dr.clone();
            for sk in s.vectors() {
                rhs -= &dr * sk * sk.transpose() * &dr;
            }
            assert!(max_abs(&(lhs - rhs)) < 1e-9, "seed {seed}");
        }
    }

    proptest! {
        #[test]
        fn dual_primal_consistency(seed in 0u64..5000, n in 2usize..30, k in 0usize..4) {
            prop_assume!(k < n);
            let (p, r, q, s) = rotation_instance(seed, n, k);
            let ts_p = TimeScale::new(p.clone());
            let ts_r = TimeScale::new(r.clone());
            let pi = big_pi(&p, &q).unwrap();
            let dw = simulate_bm_increments(&ts_p, seed, 1);
            let dv = project_increments(&dw, &pi).unwrap();
            let mut rng = ReplicateRng::new(seed, 2);
            let phi = DualFunction::new(rng.normal_vector(n), ts_p.clone()).unwrap();
            let lhs = eval_functional(&phi, &dv).unwrap();
            let pulled = DualFunction::new(pi.apply_transpose(&phi.values).unwrap(), ts_p).unwrap();
            prop_assert!((lhs - eval_functional(&pulled, &dw).unwrap()).abs() < 1e-12 * (1.0 + lhs.abs()));
            for qk in q.vectors() {
                prop_assert!(qk.dot(&dv.values).abs() < 1e-10);
            }

            let vk = rotation_vk(&q, &s, &p, &r).unwrap();
            let l = embed_l(&p, &r).unwrap();
            let out = primal_rotation(&dv, &vk, &l, &ts_r).unwrap();
            let psi = DualFunction::new(rng.normal_vector(n), ts_r).unwrap();
            let a = rotate_functional(&psi, &vk, &l, &dv).unwrap();
            let b = eval_functional(&psi, &out).unwrap();
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
            for sk in s.vectors() {
                prop_assert!(sk.dot(&out.values).abs() < 1e-9);
            }
            let image = vk.apply(&l.apply(&psi.values).unwrap()).unwrap();
            let np = crate::linalg::weighted_norm(&image, &p);
            prop_assert!((np - psi.norm2().sqrt()).abs() < 1e-10 * (1.0 + np));
        }
    }
}
