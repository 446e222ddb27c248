//! Ensemble reduction shared by both trajectory engines.
//!
//! Each engine maps a finished trajectory to the same real observable row
//! (symmetric-ordering corrections already applied for TW, normal-ordered
//! monomials for positive-P), so everything downstream of the integrators
//! is engine-agnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::N_BATCHES;
use crate::stats::{batch_mean_se, MeanSe};

/// Per-trajectory observable row. The first twelve entries are estimators
/// of quantum expectation values; the last three feed the control-variate
/// transfer-efficiency estimator.
pub const OBS_WIDTH: usize = 15;

pub mod obs {
    pub const N_A1: usize = 0;
    pub const N_A2: usize = 1;
    pub const N_B: usize = 2;
    pub const JX: usize = 3;
    pub const JY: usize = 4;
    pub const JZ: usize = 5;
    pub const JX2: usize = 6;
    pub const JY2: usize = 7;
    pub const JZ2: usize = 8;
    pub const YB: usize = 9;
    pub const YB2: usize = 10;
    pub const JX_YB: usize = 11;
    /// Initial photon-number estimator minus its exact mean sinh^2(r).
    pub const NB0_DEV: usize = 12;
    pub const NB0_DEV_SQ: usize = 13;
    pub const N_A2_NB0_DEV: usize = 14;
}

/// One trajectory's contribution to the ensemble statistics.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryRow {
    pub values: [f64; OBS_WIDTH],
    pub charge_drift: f64,
    pub diverged: bool,
}

/// First and second moments of the interferometer observables.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentSet {
    pub n_a1: f64,
    pub n_a2: f64,
    pub n_b: f64,
    pub jx: f64,
    pub jy: f64,
    pub jz: f64,
    pub jx2: f64,
    pub jy2: f64,
    pub jz2: f64,
    pub yb: f64,
    pub yb2: f64,
    pub jx_yb: f64,
}

impl MomentSet {
    fn from_means(m: &[f64; OBS_WIDTH]) -> Self {
        Self {
            n_a1: m[obs::N_A1],
            n_a2: m[obs::N_A2],
            n_b: m[obs::N_B],
            jx: m[obs::JX],
            jy: m[obs::JY],
            jz: m[obs::JZ],
            jx2: m[obs::JX2],
            jy2: m[obs::JY2],
            jz2: m[obs::JZ2],
            yb: m[obs::YB],
            yb2: m[obs::YB2],
            jx_yb: m[obs::JX_YB],
        }
    }

    pub fn var_jx(&self) -> f64 {
        self.jx2 - self.jx * self.jx
    }

    pub fn var_jy(&self) -> f64 {
        self.jy2 - self.jy * self.jy
    }

    pub fn var_jz(&self) -> f64 {
        self.jz2 - self.jz * self.jz
    }

    pub fn var_yb(&self) -> f64 {
        self.yb2 - self.yb * self.yb
    }

    pub fn cov_jx_yb(&self) -> f64 {
        self.jx_yb - self.jx * self.yb
    }
}

/// Measured transfer efficiency q with its standard error.
///
/// `value` subtracts the initial photon-number fluctuation (a control
/// variate with exactly known mean), which shrinks the error by roughly
/// the squeezed input's Fano factor without biasing the estimate. `raw`
/// is the plain ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QstEstimate {
    pub value: f64,
    pub se: f64,
    pub raw: f64,
    /// False when r = 0: no input photons, q undefined.
    pub defined: bool,
}

impl QstEstimate {
    pub fn undefined() -> Self {
        Self {
            value: f64::NAN,
            se: f64::NAN,
            raw: f64::NAN,
            defined: false,
        }
    }
}

/// Ensemble expectation values with batch-means standard errors.
///
/// Immutable after construction. `batches` keeps the per-batch moment
/// estimates so nonlinear functionals downstream can propagate errors with
/// the same batch structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMoments {
    pub mean: MomentSet,
    pub se: MomentSet,
    pub batches: Vec<MomentSet>,
    pub qst: QstEstimate,
    pub n_trajectories: usize,
    pub n_diverged: usize,
    pub max_charge_drift: f64,
}

impl EnsembleMoments {
    pub fn mean_n_a1(&self) -> MeanSe {
        MeanSe::new(self.mean.n_a1, self.se.n_a1)
    }

    pub fn mean_n_a2(&self) -> MeanSe {
        MeanSe::new(self.mean.n_a2, self.se.n_a2)
    }

    pub fn mean_n_b(&self) -> MeanSe {
        MeanSe::new(self.mean.n_b, self.se.n_b)
    }
}

/// Fraction of launched trajectories allowed to hit the divergence guard
/// before the whole ensemble is rejected.
pub const MAX_DIVERGED_FRACTION: f64 = 0.01;

/// Reduce per-trajectory rows to ensemble moments.
///
/// Rows are consumed in index order in fixed batches, so the result is
/// bit-identical for a given seed regardless of how the integration was
/// scheduled across threads. Diverged trajectories are excluded from the
/// averages and counted.
pub fn reduce_rows(rows: &[TrajectoryRow], n_b0_exact: f64, q_defined: bool) -> Result<EnsembleMoments> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InsufficientEnsemble(n));
    }
    assert_eq!(n % N_BATCHES, 0, "ensemble size must be a batch multiple");
    let per_batch = n / N_BATCHES;

    let n_diverged = rows.iter().filter(|r| r.diverged).count();
    if (n_diverged as f64) > MAX_DIVERGED_FRACTION * n as f64 {
        return Err(Error::UnusableEnsemble {
            n_diverged,
            n_launched: n,
            max_frac: 100.0 * MAX_DIVERGED_FRACTION,
        });
    }

    let mut batch_means: Vec<[f64; OBS_WIDTH]> = Vec::with_capacity(N_BATCHES);
    let mut max_drift: f64 = 0.0;
    for chunk in rows.chunks_exact(per_batch) {
        let mut sums = [0.0; OBS_WIDTH];
        let mut used = 0usize;
        for row in chunk {
            if row.diverged {
                continue;
            }
            max_drift = max_drift.max(row.charge_drift);
            for (s, v) in sums.iter_mut().zip(row.values.iter()) {
                *s += v;
            }
            used += 1;
        }
        if used == 0 {
            return Err(Error::UnusableEnsemble {
                n_diverged,
                n_launched: n,
                max_frac: 100.0 * MAX_DIVERGED_FRACTION,
            });
        }
        for s in sums.iter_mut() {
            *s /= used as f64;
        }
        batch_means.push(sums);
    }

    let mut pooled = [0.0; OBS_WIDTH];
    let mut se = [0.0; OBS_WIDTH];
    let mut col = vec![0.0; N_BATCHES];
    for i in 0..OBS_WIDTH {
        for (k, bm) in batch_means.iter().enumerate() {
            col[k] = bm[i];
        }
        let ms = batch_mean_se(&col);
        pooled[i] = ms.value;
        se[i] = ms.se;
    }

    let qst = if q_defined {
        qst_estimate(&batch_means, &pooled, n_b0_exact)
    } else {
        QstEstimate::undefined()
    };

    Ok(EnsembleMoments {
        mean: MomentSet::from_means(&pooled),
        se: MomentSet::from_means(&se),
        batches: batch_means.iter().map(MomentSet::from_means).collect(),
        qst,
        n_trajectories: n - n_diverged,
        n_diverged,
        max_charge_drift: max_drift,
    })
}

fn qst_estimate(batch_means: &[[f64; OBS_WIDTH]], pooled: &[f64; OBS_WIDTH], n_b0: f64) -> QstEstimate {
    debug_assert!(n_b0 > 0.0);
    // Optimal control-variate coefficient: Cov(n_a2, dev) / Var(dev). The
    // regressor has exactly zero mean by construction, so any fixed
    // coefficient leaves the estimator unbiased.
    let var_dev = pooled[obs::NB0_DEV_SQ] - pooled[obs::NB0_DEV] * pooled[obs::NB0_DEV];
    let cov = pooled[obs::N_A2_NB0_DEV] - pooled[obs::N_A2] * pooled[obs::NB0_DEV];
    let c = if var_dev > 0.0 { cov / var_dev } else { 0.0 };

    let adjusted: Vec<f64> = batch_means
        .iter()
        .map(|bm| (bm[obs::N_A2] - c * bm[obs::NB0_DEV]) / n_b0)
        .collect();
    let ms = batch_mean_se(&adjusted);
    let raw = pooled[obs::N_A2] / n_b0;
    QstEstimate {
        value: ms.value.clamp(0.0, 1.0),
        se: ms.se,
        raw,
        defined: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn synthetic_rows(n: usize) -> Vec<TrajectoryRow> {
        // n_a2 strongly correlated with nb0_dev, as in the real dynamics
        let mut rng = crate::rng::trajectory_rng(9, 0);
        (0..n)
            .map(|_| {
                let dev: f64 = rng.gen::<f64>() - 0.5;
                let noise: f64 = 0.01 * (rng.gen::<f64>() - 0.5);
                let mut values = [0.0; OBS_WIDTH];
                values[obs::N_A2] = 0.5 * (10.0 + dev) + noise;
                values[obs::NB0_DEV] = dev;
                values[obs::NB0_DEV_SQ] = dev * dev;
                values[obs::N_A2_NB0_DEV] = values[obs::N_A2] * dev;
                values[obs::JX] = dev;
                values[obs::JX2] = dev * dev;
                TrajectoryRow {
                    values,
                    charge_drift: 1e-12,
                    diverged: false,
                }
            })
            .collect()
    }

    #[test]
    fn control_variate_shrinks_q_error_without_bias() {
        let rows = synthetic_rows(10_000);
        let m = reduce_rows(&rows, 10.0, true).unwrap();
        assert!(m.qst.defined);
        assert_relative_eq!(m.qst.value, 0.5, epsilon = 2e-3);
        assert_relative_eq!(m.qst.raw, 0.5, epsilon = 2e-2);
        // raw SE is dominated by dev spread 0.5/sqrt(12); cv removes it
        assert!(m.qst.se < 0.3 * m.se.n_a2 / 10.0, "cv se {} raw-se {}", m.qst.se, m.se.n_a2 / 10.0);
    }

    #[test]
    fn diverged_rows_are_excluded_and_counted() {
        let mut rows = synthetic_rows(10_000);
        for row in rows.iter_mut().take(50) {
            row.diverged = true;
            row.values = [f64::NAN; OBS_WIDTH];
        }
        let m = reduce_rows(&rows, 10.0, true).unwrap();
        assert_eq!(m.n_diverged, 50);
        assert_eq!(m.n_trajectories, 9_950);
        assert!(m.mean.n_a2.is_finite());
    }

    #[test]
    fn too_many_diverged_rows_reject_the_ensemble() {
        let mut rows = synthetic_rows(10_000);
        for row in rows.iter_mut().take(150) {
            row.diverged = true;
        }
        assert!(matches!(
            reduce_rows(&rows, 10.0, true),
            Err(Error::UnusableEnsemble { n_diverged: 150, .. })
        ));
    }

    #[test]
    fn variance_accessors_combine_first_and_second_moments() {
        let rows = synthetic_rows(10_000);
        let m = reduce_rows(&rows, 10.0, true).unwrap();
        // jx = dev uniform(-0.5, 0.5): variance 1/12
        assert_relative_eq!(m.mean.var_jx(), 1.0 / 12.0, epsilon = 3e-3);
    }

    #[test]
    fn undefined_q_propagates_flag() {
        let rows = synthetic_rows(200);
        let m = reduce_rows(&rows, 0.0, false).unwrap();
        assert!(!m.qst.defined);
        assert!(m.qst.value.is_nan());
    }
}
