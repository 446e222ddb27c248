//! Shared physical parameters and the few closed forms every other layer
//! leans on.
//!
//! Times are dimensionless throughout: `tau = g * t`, so the atom-photon
//! coupling never appears explicitly outside `bs_reflection_coefficient`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tw::TwTrajectory;

/// Hyperbolic functions overflow f64 well before r = 350; anything past this
/// is a config typo, not physics.
pub const MAX_SQUEEZE_R: f64 = 300.0;

/// Ensemble sizes are rounded up to a multiple of this so the batch-means
/// error estimator always sees full batches.
pub const N_BATCHES: usize = 100;

pub const DEFAULT_N_TRAJECTORIES: usize = 50_000;
/// Reduced ensemble used inside calibration loops and smoke tests.
pub const SMOKE_N_TRAJECTORIES: usize = 10_000;

/// Inputs common to the analytic formulas and both Monte Carlo engines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Mean atom number of the condensate mode, N_t.
    pub n_atoms: f64,
    /// Squeezing parameter r of the photon-mode input.
    pub squeeze_r: f64,
    pub master_seed: u64,
    pub n_trajectories: usize,
}

impl ModelParams {
    pub fn new(n_atoms: f64, squeeze_r: f64) -> Result<Self> {
        let p = Self {
            n_atoms,
            squeeze_r,
            master_seed: 0,
            n_trajectories: DEFAULT_N_TRAJECTORIES,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }

    pub fn with_trajectories(mut self, n_trajectories: usize) -> Self {
        self.n_trajectories = n_trajectories;
        self
    }

    pub fn with_squeeze_r(mut self, squeeze_r: f64) -> Self {
        self.squeeze_r = squeeze_r;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.n_atoms.is_finite() || self.n_atoms <= 0.0 {
            return Err(Error::DegenerateInput(format!(
                "n_atoms must be positive and finite, got {}",
                self.n_atoms
            )));
        }
        if !self.squeeze_r.is_finite() || self.squeeze_r < 0.0 {
            return Err(Error::DegenerateInput(format!(
                "squeeze_r must be non-negative, got {}",
                self.squeeze_r
            )));
        }
        if self.squeeze_r > MAX_SQUEEZE_R {
            return Err(Error::DegenerateInput(format!(
                "squeeze_r = {} exceeds overflow guard {}",
                self.squeeze_r, MAX_SQUEEZE_R
            )));
        }
        if self.n_trajectories < 2 {
            return Err(Error::InsufficientEnsemble(self.n_trajectories));
        }
        Ok(())
    }

    /// Mean input photon number sinh^2(r).
    pub fn photon_number(&self) -> f64 {
        photon_number(self.squeeze_r)
    }

    /// Ensemble size after rounding up to a multiple of [`N_BATCHES`].
    pub fn effective_trajectories(&self) -> usize {
        self.n_trajectories.div_ceil(N_BATCHES) * N_BATCHES
    }
}

/// Mean photon number of a squeezed vacuum, sinh^2(r).
pub fn photon_number(squeeze_r: f64) -> f64 {
    let s = squeeze_r.sinh();
    s * s
}

/// Fraction of the photon mode transferred by the atom-light coupling after
/// time t in the undepleted (beamsplitter) limit: sin^2(g sqrt(N_t) t).
pub fn bs_reflection_coefficient(g: f64, n_atoms: f64, t: f64) -> f64 {
    let phase = g * n_atoms.sqrt() * t;
    phase.sin().powi(2)
}

/// Quantum state transfer efficiency q = <N_a2(t1)> / <N_b(t0)>.
///
/// Sampling noise can push the ratio slightly past 1; such values are clamped
/// to 1. A non-positive photon number (r = 0) makes q undefined and is an
/// error so callers can flag it rather than divide by zero.
pub fn qst_efficiency(n_a2_t1: f64, n_b_t0: f64) -> Result<f64> {
    if !n_b_t0.is_finite() || n_b_t0 <= 0.0 {
        return Err(Error::DegenerateInput(format!(
            "mean input photon number must be positive to define q, got {n_b_t0}"
        )));
    }
    if !n_a2_t1.is_finite() {
        return Err(Error::DegenerateInput(format!(
            "outcoupled atom number is not finite: {n_a2_t1}"
        )));
    }
    Ok((n_a2_t1 / n_b_t0).clamp(0.0, 1.0))
}

/// The trilinear dynamics conserve both pair sums exactly; per-trajectory
/// drift of these is the integrator health check.
pub fn conserved_charges(state: &TwTrajectory) -> [f64; 2] {
    let n1 = state.a1.norm_sqr();
    let n2 = state.a2.norm_sqr();
    let nb = state.b.norm_sqr();
    [n1 + n2, n2 + nb]
}

/// A calibrated operating point on the first rising branch of q(tau).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QstPoint {
    pub tau: f64,
    pub efficiency: f64,
}

impl QstPoint {
    pub fn new(tau: f64, efficiency: f64) -> Result<Self> {
        if !tau.is_finite() || tau < 0.0 {
            return Err(Error::DegenerateInput(format!("tau must be >= 0, got {tau}")));
        }
        if !(0.0..=1.0).contains(&efficiency) {
            return Err(Error::InvalidQ(efficiency));
        }
        Ok(Self { tau, efficiency })
    }
}
