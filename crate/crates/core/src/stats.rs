//! Batch-means error estimation.
//!
//! Trajectories are split into a fixed number of equal batches; the spread
//! of per-batch estimates gives standard errors that are robust to the
//! heavy-tailed trajectory weights squeezed inputs produce. Nonlinear
//! functionals (variances, sensitivities) are evaluated per batch and
//! pooled, which is the batch-level delta method.

use serde::{Deserialize, Serialize};

/// A point estimate with its one-sigma standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub value: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn new(value: f64, se: f64) -> Self {
        Self { value, se }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, se: 0.0 }
    }

    /// Pooled standard error of the difference between two independent
    /// estimates.
    pub fn pooled_se(&self, other: &MeanSe) -> f64 {
        (self.se * self.se + other.se * other.se).sqrt()
    }

    /// |a - b| in units of the pooled standard error.
    pub fn sigma_distance(&self, other: &MeanSe) -> f64 {
        let pooled = self.pooled_se(other);
        if pooled == 0.0 {
            if self.value == other.value {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.value - other.value).abs() / pooled
        }
    }
}

/// Mean of per-batch values and the standard error of that mean.
pub fn batch_mean_se(batch_values: &[f64]) -> MeanSe {
    let k = batch_values.len();
    assert!(k >= 2, "need at least two batches");
    let mean = batch_values.iter().sum::<f64>() / k as f64;
    let ss: f64 = batch_values.iter().map(|v| (v - mean) * (v - mean)).sum();
    MeanSe::new(mean, (ss / ((k - 1) as f64 * k as f64)).sqrt())
}

/// Covariance of two batch-mean estimators (already divided by the batch
/// count, so it is the covariance of the pooled means).
pub fn batch_mean_cov(a: &[f64], b: &[f64]) -> f64 {
    let k = a.len();
    assert_eq!(k, b.len());
    assert!(k >= 2);
    let ma = a.iter().sum::<f64>() / k as f64;
    let mb = b.iter().sum::<f64>() / k as f64;
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    s / ((k - 1) as f64 * k as f64)
}

/// Leave-one-batch-out jackknife standard error of a functional evaluated
/// on batch means. Verification mode for the batch-means errors.
pub fn jackknife_se<F>(batch_values: &[f64], f: F) -> f64
where
    F: Fn(f64) -> f64,
{
    let k = batch_values.len();
    assert!(k >= 2);
    let total: f64 = batch_values.iter().sum();
    let loo: Vec<f64> = batch_values
        .iter()
        .map(|v| f((total - v) / (k - 1) as f64))
        .collect();
    let mean = loo.iter().sum::<f64>() / k as f64;
    let ss: f64 = loo.iter().map(|v| (v - mean) * (v - mean)).sum();
    ((k - 1) as f64 / k as f64 * ss).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn batch_mean_se_matches_direct_formula() {
        let vals = [1.0, 2.0, 3.0, 4.0];
        let ms = batch_mean_se(&vals);
        assert_relative_eq!(ms.value, 2.5);
        // sample sd = sqrt(5/3), se = sd / 2
        assert_relative_eq!(ms.se, (5.0f64 / 3.0).sqrt() / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn batch_cov_of_identical_series_is_variance() {
        let vals = [0.3, -0.1, 0.7, 0.2, -0.4];
        let ms = batch_mean_se(&vals);
        assert_relative_eq!(batch_mean_cov(&vals, &vals), ms.se * ms.se, epsilon = 1e-14);
    }

    #[test]
    fn jackknife_agrees_with_batch_means_for_identity() {
        let vals: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin()).collect();
        let bm = batch_mean_se(&vals);
        let jk = jackknife_se(&vals, |x| x);
        assert_relative_eq!(jk, bm.se, max_relative = 1e-10);
    }

    #[test]
    fn sigma_distance_uses_pooled_error() {
        let a = MeanSe::new(1.0, 0.3);
        let b = MeanSe::new(2.0, 0.4);
        assert_relative_eq!(a.sigma_distance(&b), 1.0 / 0.5, epsilon = 1e-12);
        let c = MeanSe::exact(1.0);
        assert_eq!(c.sigma_distance(&MeanSe::exact(1.0)), 0.0);
    }
}
