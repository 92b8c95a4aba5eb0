//! Randomized and subset estimators of differential operators.
//!
//! Every sample draws from its own RNG stream keyed by `(seed, index)`, and
//! means are reduced pairwise in sample order, so results do not depend on
//! the number of threads.

mod dense;
mod sparse;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::pairwise_sum;

pub use dense::{
    biharmonic_dense, dense_estimate, dense_second_order, dense_second_order_expectation,
    hte_dense, hte_rademacher_atoms, parabolic_trace, DenseSecondOrder, HteDistribution,
};
pub use sparse::{
    sdgd_subset, sparse_stde, Sampling, SparseAtom, SparseJetDistribution, SparseStde,
};

/// Independent RNG for sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `k` distinct indices from `0..n`, uniformly, in draw order.
pub fn sample_indices(n: usize, k: usize, rng: &mut impl rand::Rng) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {k} distinct indices from {n}"
        )));
    }
    Ok(rand::seq::index::sample(rng, n, k).into_vec())
}

/// Summary of one estimator invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub mean: f64,
    /// Unbiased sample variance of the per-sample values (0 for one sample).
    pub variance: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<f64>>,
}

impl EstimateReport {
    pub fn from_samples(samples: Vec<f64>, seed: u64) -> Self {
        let n = samples.len();
        let mean = pairwise_sum(&samples) / n as f64;
        let variance = if n > 1 {
            let sq: Vec<f64> = samples.iter().map(|v| (v - mean) * (v - mean)).collect();
            pairwise_sum(&sq) / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            variance,
            batch_size: n,
            seed,
            samples: Some(samples),
        }
    }

    /// A single deterministic value (exhaustive or subset estimates).
    pub fn exact(value: f64, batch_size: usize, seed: u64) -> Self {
        Self {
            mean: value,
            variance: 0.0,
            batch_size,
            seed,
            samples: None,
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        (self.variance / self.batch_size as f64).sqrt()
    }

    pub fn without_samples(mut self) -> Self {
        self.samples = None;
        self
    }
}

/// One row of a variance-versus-batch-size table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub batch_size: usize,
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
    pub seed: u64,
}

/// Seed of repetition `r` derived from a base seed.
pub fn repetition_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs `estimate(batch, seed)` `reps` times per batch size with
/// independent seeds and reports the spread of the estimates.
pub fn variance_report(
    mut estimate: impl FnMut(usize, u64) -> Result<f64>,
    batch_sizes: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<VarianceRow>> {
    if reps < 2 {
        return Err(Error::InvalidArgument(format!(
            "variance needs at least 2 repetitions, got {reps}"
        )));
    }
    batch_sizes
        .iter()
        .map(|&batch| {
            let values = (0..reps)
                .map(|r| estimate(batch, repetition_seed(seed, r)))
                .collect::<Result<Vec<_>>>()?;
            let rep = EstimateReport::from_samples(values, seed);
            Ok(VarianceRow {
                batch_size: batch,
                mean: rep.mean,
                variance: rep.variance,
                stderr: rep.stderr(),
                seed,
            })
        })
        .collect()
}

/// CSV with header `batch_size,mean,variance,stderr,seed`.
pub fn variance_csv(rows: &[VarianceRow]) -> String {
    let mut out = String::from("batch_size,mean,variance,stderr,seed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{}\n",
            r.batch_size, r.mean, r.variance, r.stderr, r.seed
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: f64 = sample_rng(7, 0).random();
        let b: f64 = sample_rng(7, 1).random();
        let c: f64 = sample_rng(7, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn report_statistics() {
        let r = EstimateReport::from_samples(vec![1.0, 2.0, 3.0, 4.0], 0);
        assert_eq!(r.mean, 2.5);
        assert!((r.variance - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(EstimateReport::from_samples(vec![3.0], 0).variance, 0.0);
    }

    #[test]
    fn deterministic_estimator_has_zero_variance() {
        let rows = variance_report(|_, _| Ok(10.0), &[1, 4, 16], 5, 3).unwrap();
        assert!(rows.iter().all(|r| r.variance == 0.0 && r.mean == 10.0));
        let csv = variance_csv(&rows);
        assert!(csv.starts_with("batch_size,mean,variance,stderr,seed\n1,"));
        assert!(variance_report(|_, _| Ok(1.0), &[1], 1, 0).is_err());
    }

    #[test]
    fn index_sampling() {
        let mut rng = sample_rng(1, 0);
        let mut idx = sample_indices(10, 10, &mut rng).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
        assert!(sample_indices(3, 0, &mut rng).is_err());
        assert!(sample_indices(3, 4, &mut rng).is_err());
    }
}
