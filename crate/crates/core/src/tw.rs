//! Truncated Wigner trajectories for the three-mode transfer.
//!
//! Each trajectory is a deterministic ODE solve of the mean-field equations
//! from stochastic initial conditions; all quantum noise lives in the
//! sampling. Estimators below correct for the symmetric operator ordering
//! this phase-space representation averages over.

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{conserved_charges, ModelParams};
use crate::moments::{obs, reduce_rows, EnsembleMoments, TrajectoryRow, OBS_WIDTH};
use crate::rng::{trajectory_rng, vacuum_noise};

/// Phase-space amplitudes of the three modes along one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwTrajectory {
    /// Reference atomic mode.
    pub a1: Complex64,
    /// Outcoupled atomic mode.
    pub a2: Complex64,
    /// Photon mode.
    pub b: Complex64,
}

/// Stepping scheme for the stochastic integrator. The Wigner equations are
/// noiseless after sampling and always use classic fourth-order Runge-Kutta;
/// the schemes here select the positive-P integrator variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    Rk4,
    Heun,
    EulerMaruyama,
}

/// Fixed-step integration settings shared by both engines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub n_steps: usize,
    pub scheme: Scheme,
    /// Trajectories with any |amplitude| above this multiple of sqrt(N_t)
    /// are dropped as diverged.
    pub amp_guard_factor: f64,
}

impl IntegratorConfig {
    pub fn tw_default() -> Self {
        Self {
            n_steps: 1024,
            scheme: Scheme::Rk4,
            amp_guard_factor: 1e3,
        }
    }

    pub fn pp_default() -> Self {
        Self {
            n_steps: 2048,
            scheme: Scheme::Heun,
            amp_guard_factor: 1e3,
        }
    }
}

/// Draw initial amplitudes: coherent reference, empty transfer mode,
/// squeezed vacuum photon mode. Half a quantum of sampling noise per mode
/// carries the vacuum fluctuations.
pub fn sample_tw_initial(params: &ModelParams, rng: &mut ChaCha8Rng) -> TwTrajectory {
    let eta1 = vacuum_noise(rng);
    let eta2 = vacuum_noise(rng);
    let eta3 = vacuum_noise(rng);
    let r = params.squeeze_r;
    TwTrajectory {
        a1: Complex64::new(params.n_atoms.sqrt(), 0.0) + eta1,
        a2: eta2,
        b: eta3 * r.cosh() + eta3.conj() * r.sinh(),
    }
}

const MINUS_I: Complex64 = Complex64::new(0.0, -1.0);

fn derivatives(s: [Complex64; 3]) -> [Complex64; 3] {
    let [a1, a2, b] = s;
    [
        MINUS_I * a2 * b.conj(),
        MINUS_I * a1 * b,
        MINUS_I * a2 * a1.conj(),
    ]
}

fn add_scaled(y: [Complex64; 3], k: [Complex64; 3], h: f64) -> [Complex64; 3] {
    [y[0] + k[0] * h, y[1] + k[1] * h, y[2] + k[2] * h]
}

/// Advance one trajectory to time tau with fixed-step RK4. Returns true if
/// the amplitude guard tripped (state is then unusable).
pub fn integrate_tw(state: &mut TwTrajectory, tau: f64, config: &IntegratorConfig, n_atoms: f64) -> bool {
    if tau == 0.0 {
        return false;
    }
    let h = tau / config.n_steps as f64;
    let guard_sq = (config.amp_guard_factor * n_atoms.sqrt()).powi(2);
    let mut y = [state.a1, state.a2, state.b];
    for _ in 0..config.n_steps {
        let k1 = derivatives(y);
        let k2 = derivatives(add_scaled(y, k1, h / 2.0));
        let k3 = derivatives(add_scaled(y, k2, h / 2.0));
        let k4 = derivatives(add_scaled(y, k3, h));
        for i in 0..3 {
            y[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        }
        let worst = y.iter().map(Complex64::norm_sqr).fold(0.0, f64::max);
        if !worst.is_finite() || worst > guard_sq {
            *state = TwTrajectory { a1: y[0], a2: y[1], b: y[2] };
            return true;
        }
    }
    *state = TwTrajectory { a1: y[0], a2: y[1], b: y[2] };
    false
}

/// One finished trajectory with its bookkeeping.
#[derive(Debug, Clone, Copy)]
pub struct TwOutcome {
    pub state: TwTrajectory,
    /// Initial photon-number estimator minus its exact mean; control
    /// variate for the transfer-efficiency estimate.
    pub nb0_dev: f64,
    /// Relative drift of the worst conserved pair sum.
    pub charge_drift: f64,
    pub diverged: bool,
}

fn relative_drift(before: [f64; 2], after: [f64; 2]) -> f64 {
    before
        .iter()
        .zip(after.iter())
        .map(|(b, a)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Integrate the full ensemble. Trajectory i draws from an independent
/// counter-based RNG stream keyed by (master_seed, i), so results do not
/// depend on thread count or scheduling.
pub fn run_tw_trajectories(params: &ModelParams, tau: f64, config: &IntegratorConfig) -> Vec<TwOutcome> {
    let n = params.effective_trajectories();
    (0..n as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = trajectory_rng(params.master_seed, index);
            let mut state = sample_tw_initial(params, &mut rng);
            let nb0_dev = state.b.norm_sqr() - 0.5 - params.photon_number();
            let before = conserved_charges(&state);
            let diverged = integrate_tw(&mut state, tau, config, params.n_atoms);
            let charge_drift = if diverged {
                f64::INFINITY
            } else {
                relative_drift(before, conserved_charges(&state))
            };
            TwOutcome {
                state,
                nb0_dev,
                charge_drift,
                diverged,
            }
        })
        .collect()
}

/// Map a trajectory to the shared observable row, applying the symmetric-
/// ordering corrections: -1/2 per mode for numbers, -1/8 for squared spin
/// components, none for the quadrature moments.
pub fn tw_row(outcome: &TwOutcome) -> TrajectoryRow {
    let s = &outcome.state;
    let mut v = [0.0; OBS_WIDTH];
    let cross = s.a1.conj() * s.a2;
    let jx = cross.re;
    let jy = cross.im;
    let jz = 0.5 * (s.a1.norm_sqr() - s.a2.norm_sqr());
    let yb = -2.0 * s.b.im;
    v[obs::N_A1] = s.a1.norm_sqr() - 0.5;
    v[obs::N_A2] = s.a2.norm_sqr() - 0.5;
    v[obs::N_B] = s.b.norm_sqr() - 0.5;
    v[obs::JX] = jx;
    v[obs::JY] = jy;
    v[obs::JZ] = jz;
    v[obs::JX2] = jx * jx - 0.125;
    v[obs::JY2] = jy * jy - 0.125;
    v[obs::JZ2] = jz * jz - 0.125;
    v[obs::YB] = yb;
    v[obs::YB2] = yb * yb;
    v[obs::JX_YB] = jx * yb;
    v[obs::NB0_DEV] = outcome.nb0_dev;
    v[obs::NB0_DEV_SQ] = outcome.nb0_dev * outcome.nb0_dev;
    v[obs::N_A2_NB0_DEV] = v[obs::N_A2] * outcome.nb0_dev;
    TrajectoryRow {
        values: v,
        charge_drift: outcome.charge_drift,
        diverged: outcome.diverged,
    }
}

/// Full Wigner ensemble reduced to moments with batch-means errors.
pub fn run_tw(params: &ModelParams, tau: f64, config: &IntegratorConfig) -> Result<EnsembleMoments> {
    params.validate()?;
    let outcomes = run_tw_trajectories(params, tau, config);
    let rows: Vec<TrajectoryRow> = outcomes.iter().map(tw_row).collect();
    reduce_rows(&rows, params.photon_number(), params.squeeze_r > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic_bs::bs_exact_moments;
    use crate::model::SMOKE_N_TRAJECTORIES;
    use approx::assert_relative_eq;

    fn smoke_params(r: f64) -> ModelParams {
        ModelParams::new(1.0e4, r)
            .unwrap()
            .with_seed(42)
            .with_trajectories(SMOKE_N_TRAJECTORIES)
    }

    #[test]
    fn initial_ensemble_reproduces_input_state_moments() {
        let params = smoke_params(2.0);
        let m = run_tw(&params, 0.0, &IntegratorConfig::tw_default()).unwrap();
        let nt = params.n_atoms;
        let sh2 = params.photon_number();

        let check = |value: f64, se: f64, target: f64, label: &str| {
            let dist = (value - target).abs() / se.max(1e-12);
            assert!(dist < 4.0, "{label}: {value} vs {target} ({dist:.1} se)");
        };
        check(m.mean.n_a1, m.se.n_a1, nt, "n_a1");
        check(m.mean.n_a2, m.se.n_a2, 0.0, "n_a2");
        check(m.mean.n_b, m.se.n_b, sh2, "n_b");
        check(m.mean.jz, m.se.jz, nt / 2.0, "jz");
        check(m.mean.yb, m.se.yb, 0.0, "yb");
        // spin variances of a coherent state are N_t/4; quadrature variance
        // of the squeezed mode is e^{-2r}
        assert_relative_eq!(m.mean.var_jx(), nt / 4.0, max_relative = 0.05);
        assert_relative_eq!(m.mean.var_jy(), nt / 4.0, max_relative = 0.05);
        assert_relative_eq!(m.mean.var_jz(), nt / 4.0, max_relative = 0.06);
        assert_relative_eq!(m.mean.var_yb(), (-4.0f64).exp(), max_relative = 0.05);
        // squared-number moment fixes the -1/8 correction sign
        assert_relative_eq!(m.mean.jz2, (nt * nt + nt) / 4.0, max_relative = 1e-3);
    }

    #[test]
    fn pair_sums_are_conserved_through_integration() {
        let params = ModelParams::new(400.0, 1.5)
            .unwrap()
            .with_seed(7)
            .with_trajectories(500);
        let m = run_tw(&params, 0.05, &IntegratorConfig::tw_default()).unwrap();
        assert!(m.max_charge_drift < 1e-10, "drift {}", m.max_charge_drift);
        assert_eq!(m.n_diverged, 0);
    }

    #[test]
    fn step_count_is_converged_at_default_resolution() {
        let params = smoke_params(2.0).with_trajectories(2_000);
        let tau = 0.012;
        let coarse = run_tw(&params, tau, &IntegratorConfig { n_steps: 512, ..IntegratorConfig::tw_default() }).unwrap();
        let fine = run_tw(&params, tau, &IntegratorConfig { n_steps: 2048, ..IntegratorConfig::tw_default() }).unwrap();
        // same seed, same draws: difference is pure time-stepping error
        let diff = (coarse.mean.n_a2 - fine.mean.n_a2).abs();
        assert!(diff < 0.01 * fine.se.n_a2, "step error {diff} vs se {}", fine.se.n_a2);
    }

    #[test]
    fn undepleted_transfer_matches_beamsplitter_moments() {
        // tau for q = 1/2 in the linear regime: asin(sqrt(q))/sqrt(N_t)
        let params = smoke_params(1.0);
        let tau = (0.5f64.sqrt()).asin() / params.n_atoms.sqrt();
        let m = run_tw(&params, tau, &IntegratorConfig::tw_default()).unwrap();
        let exact = bs_exact_moments(1.0, 0.5, params.n_atoms).unwrap();

        let within = |value: f64, se: f64, target: f64, n_se: f64, label: &str| {
            let dist = (value - target).abs() / se.max(1e-12);
            assert!(dist < n_se, "{label}: {value} vs {target} ({dist:.1} se)");
        };
        within(m.mean.n_a1, m.se.n_a1, exact.n_a1, 4.0, "n_a1");
        within(m.mean.n_a2, m.se.n_a2, exact.n_a2, 4.0, "n_a2");
        within(m.mean.n_b, m.se.n_b, exact.n_b, 4.0, "n_b");
        within(m.mean.jz, m.se.jz, exact.jz, 4.0, "jz");
        assert_relative_eq!(m.mean.var_jx(), exact.var_jx(), max_relative = 0.06);
        assert_relative_eq!(m.mean.var_jy(), exact.var_jy(), max_relative = 0.06);
        assert_relative_eq!(m.mean.var_yb(), exact.var_yb(), max_relative = 0.06);
        assert_relative_eq!(m.mean.cov_jx_yb(), exact.cov_jx_yb(), max_relative = 0.10);
        // transfer efficiency estimate lands on q = 1/2
        assert!(m.qst.defined);
        assert!((m.qst.value - 0.5).abs() < 4.0 * m.qst.se, "q = {:?}", m.qst);
        // partition noise floor q(1-q)/n_b0 dominates the se at q = 1/2
        assert!(m.qst.se < 1e-2, "cv estimator precision {}", m.qst.se);
    }

    #[test]
    fn ensembles_are_reproducible_and_seed_sensitive() {
        let params = smoke_params(1.0).with_trajectories(1_000);
        let config = IntegratorConfig::tw_default();
        let a = run_tw(&params, 0.005, &config).unwrap();
        let b = run_tw(&params, 0.005, &config).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.se, b.se);
        let c = run_tw(&params.with_seed(43), 0.005, &config).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn amplitude_guard_rejects_the_ensemble_when_everything_trips() {
        let params = smoke_params(1.0).with_trajectories(200);
        let config = IntegratorConfig {
            amp_guard_factor: 1e-6,
            ..IntegratorConfig::tw_default()
        };
        assert!(run_tw(&params, 0.01, &config).is_err());
    }
}
