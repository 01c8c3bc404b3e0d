//! Monte-Carlo plumbing: ordered parallel replicate runs and a mergeable
//! moment accumulator.

use rayon::prelude::*;

use crate::linalg::{Matrix, Vector};

const CHUNK: u64 = 1024;

/// Runs `f(replicate_index)` for every index in `0..reps`, in parallel, and
/// returns the results in index order.
pub fn run_replicates<T, F>(reps: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..reps).into_par_iter().map(f).collect()
}

/// Streams replicate vectors into a [`MomentAccumulator`]. Chunks are folded in
/// parallel and merged in a fixed order, so the result does not depend on the
/// thread count.
pub fn accumulate_replicates<F>(reps: u64, dim: usize, f: F) -> MomentAccumulator
where
    F: Fn(u64) -> Vector + Sync + Send,
{
    let chunks = reps.div_ceil(CHUNK);
    let partial: Vec<MomentAccumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = MomentAccumulator::new(dim);
            for i in (c * CHUNK)..((c + 1) * CHUNK).min(reps) {
                acc.push(&f(i));
            }
            acc
        })
        .collect();
    partial.into_iter().fold(MomentAccumulator::new(dim), MomentAccumulator::merge)
}

/// Count, mean and co-moment matrix of a stream of vectors. Merging is
/// associative and commutative (up to rounding).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    count: u64,
    mean: Vector,
    comoment: Matrix,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        MomentAccumulator { count: 0, mean: Vector::zeros(dim), comoment: Matrix::zeros(dim, dim) }
    }

    pub fn push(&mut self, x: &Vector) {
        self.count += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.count as f64;
        let delta2 = x - &self.mean;
        self.comoment += &delta * delta2.transpose();
    }

    pub fn merge(self, other: MomentAccumulator) -> MomentAccumulator {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let n = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = &other.mean - &self.mean;
        let mean = &self.mean + &delta * (nb / n as f64);
        let comoment = self.comoment + other.comoment + (&delta * delta.transpose()) * (na * nb / n as f64);
        MomentAccumulator { count: n, mean, comoment }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> Matrix {
        &self.comoment / (self.count.saturating_sub(1).max(1)) as f64
    }

    /// Standard error of each sample-mean entry.
    pub fn mean_se(&self) -> Vector {
        let c = self.covariance();
        Vector::from_fn(self.mean.len(), |i, _| (c[(i, i)] / self.count as f64).sqrt())
    }

    /// Standard error of each covariance entry under joint normality:
    /// `sqrt((σ_ii σ_jj + σ_ij²)/n)`.
    pub fn covariance_se_gaussian(&self) -> Matrix {
        let c = self.covariance();
        let n = self.count as f64;
        Matrix::from_fn(c.nrows(), c.ncols(), |i, j| ((c[(i, i)] * c[(j, j)] + c[(i, j)].powi(2)) / n).sqrt())
    }
}

/// Mean and standard error of a scalar sample.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample covariance of two equally long samples and its standard error, the
/// latter estimated from the empirical variance of the centred products.
pub fn covariance_and_se(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let (mx, _) = mean_and_se(xs);
    let (my, _) = mean_and_se(ys);
    let prods: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    mean_and_se(&prods)
}

/// Pearson correlation.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let (c, _) = covariance_and_se(xs, ys);
    let (vx, _) = covariance_and_se(xs, xs);
    let (vy, _) = covariance_and_se(ys, ys);
    c / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(i: u64) -> Vector {
        let x = (i as f64 * 0.37).sin();
        Vector::from_vec(vec![x, 2.0 * x + (i as f64).cos()])
    }

    #[test]
    fn merge_agrees_with_single_pass() {
        let mut whole = MomentAccumulator::new(2);
        let mut a = MomentAccumulator::new(2);
        let mut b = MomentAccumulator::new(2);
        for i in 0..500 {
            whole.push(&sample(i));
            if i % 3 == 0 {
                a.push(&sample(i))
            } else {
                b.push(&sample(i))
            }
        }
        let ab = a.clone().merge(b.clone());
        let ba = b.merge(a);
        assert_eq!(ab.count(), 500);
        assert!(crate::linalg::max_abs(&(ab.covariance() - whole.covariance())) < 1e-12);
        assert!(crate::linalg::max_abs(&(ab.covariance() - ba.covariance())) < 1e-12);
        assert!(crate::linalg::max_abs_vec(&(ab.mean() - whole.mean())) < 1e-12);
    }

    #[test]
    fn parallel_accumulation_is_deterministic() {
        let a = accumulate_replicates(5000, 2, sample);
        let b = accumulate_replicates(5000, 2, sample);
        assert_eq!(a, b);
        let ordered = run_replicates(10, |i| i * 2);
        assert_eq!(ordered, (0..10).map(|i| i * 2).collect::<Vec<_>>());
    }
}
