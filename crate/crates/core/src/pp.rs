//! Positive-P trajectories for the three-mode transfer.
//!
//! The doubled phase space makes amplitudes and their conjugate partners
//! independent variables, bought at the price of multiplicative noise in
//! two of the six equations. Averages of normal-ordered monomials converge
//! to the exact quantum expectations while boundary terms stay negligible,
//! which holds for the short transfer times used here. The drift restricted
//! to the conjugate manifold (partners equal to complex conjugates)
//! coincides with the Wigner flow, a property the tests lean on.

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ModelParams;
use crate::moments::{obs, reduce_rows, EnsembleMoments, TrajectoryRow, OBS_WIDTH};
use crate::rng::{standard_normal, trajectory_rng, unit_complex_gaussian};
use crate::tw::{IntegratorConfig, Scheme, TwTrajectory};

/// Doubled phase-space amplitudes: three modes and their conjugate
/// partners, evolving independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpTrajectory {
    pub a1: Complex64,
    pub a2: Complex64,
    pub b: Complex64,
    pub a1p: Complex64,
    pub a2p: Complex64,
    pub bp: Complex64,
}

impl PpTrajectory {
    /// Embed a Wigner state on the conjugate manifold. Drift-only evolution
    /// keeps the manifold invariant.
    pub fn from_conjugate_manifold(state: &TwTrajectory) -> Self {
        Self {
            a1: state.a1,
            a2: state.a2,
            b: state.b,
            a1p: state.a1.conj(),
            a2p: state.a2.conj(),
            bp: state.b.conj(),
        }
    }
}

/// Draw initial amplitudes: deterministic coherent reference and empty
/// transfer mode; the squeezed photon mode needs four real Gaussians to
/// reproduce its normally-ordered moments.
pub fn sample_pp_initial(params: &ModelParams, rng: &mut ChaCha8Rng) -> PpTrajectory {
    let r = params.squeeze_r;
    let nu_minus = (((-r).exp() * r.cosh()) / 2.0).sqrt();
    let nu_plus = ((r.exp() * r.cosh()) / 2.0).sqrt();
    let n1 = standard_normal(rng);
    let n2 = standard_normal(rng);
    let eta = unit_complex_gaussian(rng);
    let root_nt = Complex64::new(params.n_atoms.sqrt(), 0.0);
    PpTrajectory {
        a1: root_nt,
        a2: Complex64::new(0.0, 0.0),
        b: Complex64::new(-nu_plus * n2, nu_minus * n1) + eta,
        a1p: root_nt,
        a2p: Complex64::new(0.0, 0.0),
        bp: Complex64::new(-nu_plus * n2, -nu_minus * n1) - eta.conj(),
    }
}

const I: Complex64 = Complex64::new(0.0, 1.0);
const MINUS_I: Complex64 = Complex64::new(0.0, -1.0);
/// Principal square roots of -i and +i.
const SQRT_MINUS_I: Complex64 = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2);
const SQRT_I: Complex64 = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2);

type State6 = [Complex64; 6];

fn drift(s: State6) -> State6 {
    let [a1, a2, b, a1p, a2p, bp] = s;
    [
        MINUS_I * a2 * bp,
        MINUS_I * a1 * b,
        MINUS_I * a2 * a1p,
        I * a2p * b,
        I * a1p * bp,
        I * a2p * a1,
    ]
}

/// Noise increment for given Wiener increments. Multiplicative only through
/// the transfer-mode amplitudes, which themselves carry no noise; this is
/// why the Ito and Stratonovich readings agree.
fn noise(s: State6, dw1: Complex64, dw2: Complex64) -> State6 {
    let zero = Complex64::new(0.0, 0.0);
    [
        SQRT_MINUS_I * s[1] * dw1,
        zero,
        SQRT_MINUS_I * dw1.conj(),
        SQRT_I * s[4] * dw2,
        zero,
        SQRT_I * dw2.conj(),
    ]
}

fn add3(y: State6, a: State6, fa: f64, b: State6, fb: f64) -> State6 {
    let mut out = y;
    for i in 0..6 {
        out[i] += a[i] * fa + b[i] * fb;
    }
    out
}

/// Advance one doubled-space trajectory to time tau. `with_noise = false`
/// integrates the bare drift (used for cross-validation against the Wigner
/// flow). Returns true if the amplitude guard tripped.
pub fn integrate_pp(
    state: &mut PpTrajectory,
    tau: f64,
    config: &IntegratorConfig,
    n_atoms: f64,
    rng: &mut ChaCha8Rng,
    with_noise: bool,
) -> bool {
    if tau == 0.0 {
        return false;
    }
    let h = tau / config.n_steps as f64;
    let sqrt_h = h.sqrt();
    let guard_sq = (config.amp_guard_factor * n_atoms.sqrt()).powi(2);
    let zero = Complex64::new(0.0, 0.0);
    let mut y = [state.a1, state.a2, state.b, state.a1p, state.a2p, state.bp];
    for _ in 0..config.n_steps {
        let (dw1, dw2) = if with_noise {
            (
                unit_complex_gaussian(rng) * sqrt_h,
                unit_complex_gaussian(rng) * sqrt_h,
            )
        } else {
            (zero, zero)
        };
        y = match config.scheme {
            Scheme::EulerMaruyama => add3(y, drift(y), h, noise(y, dw1, dw2), 1.0),
            // predictor-corrector with the same Wiener increment in both
            // stages; second weak order for these commuting-noise equations
            Scheme::Heun | Scheme::Rk4 => {
                let f0 = drift(y);
                let g0 = noise(y, dw1, dw2);
                let pred = add3(y, f0, h, g0, 1.0);
                let f1 = drift(pred);
                let g1 = noise(pred, dw1, dw2);
                add3(y, add3([zero; 6], f0, 1.0, f1, 1.0), h / 2.0, add3([zero; 6], g0, 1.0, g1, 1.0), 0.5)
            }
        };
        let worst = y.iter().map(Complex64::norm_sqr).fold(0.0, f64::max);
        if !worst.is_finite() || worst > guard_sq {
            *state = PpTrajectory { a1: y[0], a2: y[1], b: y[2], a1p: y[3], a2p: y[4], bp: y[5] };
            return true;
        }
    }
    *state = PpTrajectory { a1: y[0], a2: y[1], b: y[2], a1p: y[3], a2p: y[4], bp: y[5] };
    false
}

/// One finished doubled-space trajectory.
#[derive(Debug, Clone, Copy)]
pub struct PpOutcome {
    pub state: PpTrajectory,
    pub nb0_dev: f64,
    pub diverged: bool,
}

/// Integrate the full ensemble with per-index RNG streams, as in the
/// Wigner engine.
pub fn run_pp_trajectories(params: &ModelParams, tau: f64, config: &IntegratorConfig) -> Vec<PpOutcome> {
    let n = params.effective_trajectories();
    (0..n as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = trajectory_rng(params.master_seed, index);
            let mut state = sample_pp_initial(params, &mut rng);
            let nb0_dev = (state.bp * state.b).re - params.photon_number();
            let diverged = integrate_pp(&mut state, tau, config, params.n_atoms, &mut rng, true);
            PpOutcome {
                state,
                nb0_dev,
                diverged,
            }
        })
        .collect()
}

/// Map a trajectory to the shared observable row via normal-ordered
/// monomials; real parts are taken per trajectory, imaginary parts average
/// to zero.
pub fn pp_row(outcome: &PpOutcome) -> TrajectoryRow {
    let s = &outcome.state;
    let s1 = s.a1p * s.a1;
    let s2 = s.a2p * s.a2;
    let nn = s1 * s2;
    let c12 = s.a1p * s.a2;
    let c21 = s.a2p * s.a1;
    let d1 = c12 * c12;
    let d2 = c21 * c21;
    let sq1 = s1 * s1;
    let sq2 = s2 * s2;
    let ybc = I * (s.b - s.bp);
    let yb2c = -s.b * s.b - s.bp * s.bp + 2.0 * s.bp * s.b + 1.0;
    let jxc = 0.5 * (c12 + c21);

    let mut v = [0.0; OBS_WIDTH];
    v[obs::N_A1] = s1.re;
    v[obs::N_A2] = s2.re;
    v[obs::N_B] = (s.bp * s.b).re;
    v[obs::JX] = jxc.re;
    v[obs::JY] = 0.5 * (c12 - c21).im;
    v[obs::JZ] = 0.5 * (s1 - s2).re;
    v[obs::JX2] = 0.25 * (d1 + d2 + 2.0 * nn + s1 + s2).re;
    v[obs::JY2] = 0.25 * (-d1 - d2 + 2.0 * nn + s1 + s2).re;
    v[obs::JZ2] = 0.25 * (sq1 + sq2 - 2.0 * nn + s1 + s2).re;
    v[obs::YB] = ybc.re;
    v[obs::YB2] = yb2c.re;
    v[obs::JX_YB] = (jxc * ybc).re;
    v[obs::NB0_DEV] = outcome.nb0_dev;
    v[obs::NB0_DEV_SQ] = outcome.nb0_dev * outcome.nb0_dev;
    v[obs::N_A2_NB0_DEV] = v[obs::N_A2] * outcome.nb0_dev;
    TrajectoryRow {
        values: v,
        // per-trajectory pair sums are only conserved in the mean once the
        // noise acts, so no drift diagnostic is recorded
        charge_drift: 0.0,
        diverged: outcome.diverged,
    }
}

/// Divergence bookkeeping of a doubled-space ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpGuardReport {
    pub n_launched: usize,
    pub n_diverged: usize,
    /// Largest |amplitude|^2 over surviving trajectories, in units of N_t.
    pub peak_occupation: f64,
}

impl PpGuardReport {
    pub fn from_outcomes(outcomes: &[PpOutcome], n_atoms: f64) -> Self {
        let n_diverged = outcomes.iter().filter(|o| o.diverged).count();
        let peak = outcomes
            .iter()
            .filter(|o| !o.diverged)
            .map(|o| {
                let s = &o.state;
                [s.a1, s.a2, s.b, s.a1p, s.a2p, s.bp]
                    .iter()
                    .map(Complex64::norm_sqr)
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        Self {
            n_launched: outcomes.len(),
            n_diverged,
            peak_occupation: peak / n_atoms,
        }
    }
}

/// Full doubled-space ensemble reduced to moments with batch-means errors.
pub fn run_pp(params: &ModelParams, tau: f64, config: &IntegratorConfig) -> Result<EnsembleMoments> {
    params.validate()?;
    let outcomes = run_pp_trajectories(params, tau, config);
    let rows: Vec<TrajectoryRow> = outcomes.iter().map(pp_row).collect();
    reduce_rows(&rows, params.photon_number(), params.squeeze_r > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::photon_number;
    use crate::tw::{integrate_tw, sample_tw_initial};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn initial_samples_reproduce_squeezed_vacuum_moments() {
        let params = ModelParams::new(1.0e4, 2.0).unwrap();
        let n = 200_000;
        let mut rng = trajectory_rng(3, 0);
        let (mut occ, mut pair, mut pair_p, mut yb) = (0.0, 0.0, 0.0, 0.0);
        let (mut yb2, mut yb2_sq) = (0.0, 0.0);
        for _ in 0..n {
            let s = sample_pp_initial(&params, &mut rng);
            assert_eq!(s.a1.re, 100.0);
            assert_eq!(s.a2, Complex64::new(0.0, 0.0));
            occ += (s.bp * s.b).re;
            pair += (s.b * s.b).re;
            pair_p += (s.bp * s.bp).re;
            yb += (I * (s.b - s.bp)).re;
            let q = (-s.b * s.b - s.bp * s.bp + 2.0 * s.bp * s.b + 1.0).re;
            yb2 += q;
            yb2_sq += q * q;
        }
        let n = n as f64;
        let r: f64 = 2.0;
        let sh_ch = r.sinh() * r.cosh();
        assert_relative_eq!(occ / n, photon_number(2.0), max_relative = 0.02);
        assert_relative_eq!(pair / n, sh_ch, max_relative = 0.02);
        assert_relative_eq!(pair_p / n, sh_ch, max_relative = 0.02);
        assert_abs_diff_eq!(yb / n, 0.0, epsilon = 0.02);
        // the quadrature variance is a small difference of broad products, so
        // its sampling error dominates; bound it by the measured spread
        let yb2_mean = yb2 / n;
        let yb2_se = ((yb2_sq / n - yb2_mean * yb2_mean) / n).sqrt();
        let gap = (yb2_mean - (-2.0 * r).exp()).abs();
        assert!(gap < 4.0 * yb2_se, "yb2 {} vs {} (se {})", yb2_mean, (-2.0 * r).exp(), yb2_se);
    }

    #[test]
    fn drift_on_conjugate_manifold_matches_wigner_flow() {
        let params = ModelParams::new(900.0, 1.2).unwrap().with_seed(11);
        let mut rng = trajectory_rng(11, 5);
        let mut tw_state = sample_tw_initial(&params, &mut rng);
        let mut pp_state = PpTrajectory::from_conjugate_manifold(&tw_state);
        let tau = 0.04;

        let tw_config = IntegratorConfig { n_steps: 4096, ..IntegratorConfig::tw_default() };
        assert!(!integrate_tw(&mut tw_state, tau, &tw_config, params.n_atoms));
        // Heun is second order; use a fine grid to reach the RK4 reference
        let pp_config = IntegratorConfig { n_steps: 32_768, ..IntegratorConfig::pp_default() };
        let mut noise_rng = trajectory_rng(11, 6);
        assert!(!integrate_pp(&mut pp_state, tau, &pp_config, params.n_atoms, &mut noise_rng, false));

        for (got, want) in [
            (pp_state.a1, tw_state.a1),
            (pp_state.a2, tw_state.a2),
            (pp_state.b, tw_state.b),
            (pp_state.a1p, tw_state.a1.conj()),
            (pp_state.a2p, tw_state.a2.conj()),
            (pp_state.bp, tw_state.b.conj()),
        ] {
            assert!(
                (got - want).norm() / want.norm().max(1.0) < 1e-8,
                "{got} vs {want}"
            );
        }
    }

    #[test]
    fn pair_sums_conserved_in_the_mean() {
        let params = ModelParams::new(2500.0, 1.5)
            .unwrap()
            .with_seed(21)
            .with_trajectories(4_000);
        let m = run_pp(&params, 0.02, &IntegratorConfig::pp_default()).unwrap();
        let atoms = MeanSeSum(m.mean.n_a1 + m.mean.n_a2, (m.se.n_a1.powi(2) + m.se.n_a2.powi(2)).sqrt());
        let quanta = MeanSeSum(m.mean.n_a2 + m.mean.n_b, (m.se.n_a2.powi(2) + m.se.n_b.powi(2)).sqrt());
        assert!(
            (atoms.0 - params.n_atoms).abs() < 4.0 * atoms.1,
            "atom sum {} +- {}",
            atoms.0,
            atoms.1
        );
        assert!(
            (quanta.0 - params.photon_number()).abs() < 4.0 * quanta.1,
            "quanta sum {} +- {} vs {}",
            quanta.0,
            quanta.1,
            params.photon_number()
        );
    }

    struct MeanSeSum(f64, f64);

    #[test]
    fn ito_and_stratonovich_integrators_agree() {
        let params = ModelParams::new(2500.0, 1.5)
            .unwrap()
            .with_seed(31)
            .with_trajectories(3_000);
        let tau = 0.02;
        let heun = run_pp(&params, tau, &IntegratorConfig::pp_default()).unwrap();
        let em = run_pp(
            &params,
            tau,
            &IntegratorConfig { scheme: Scheme::EulerMaruyama, ..IntegratorConfig::pp_default() },
        )
        .unwrap();
        for (a, ae, b, be, label) in [
            (heun.mean.n_a2, heun.se.n_a2, em.mean.n_a2, em.se.n_a2, "n_a2"),
            (heun.mean.jx2, heun.se.jx2, em.mean.jx2, em.se.jx2, "jx2"),
            (heun.mean.yb2, heun.se.yb2, em.mean.yb2, em.se.yb2, "yb2"),
        ] {
            let pooled = (ae * ae + be * be).sqrt();
            assert!(
                (a - b).abs() < 2.5 * pooled,
                "{label}: {a} vs {b} (pooled se {pooled})"
            );
        }
    }

    #[test]
    fn ensembles_are_reproducible_and_seed_sensitive() {
        let params = ModelParams::new(400.0, 1.0)
            .unwrap()
            .with_seed(5)
            .with_trajectories(500);
        let config = IntegratorConfig::pp_default();
        let a = run_pp(&params, 0.01, &config).unwrap();
        let b = run_pp(&params, 0.01, &config).unwrap();
        assert_eq!(a.mean, b.mean);
        let c = run_pp(&params.with_seed(6), 0.01, &config).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn guard_report_counts_survivors() {
        let params = ModelParams::new(400.0, 1.0)
            .unwrap()
            .with_seed(5)
            .with_trajectories(300);
        let outcomes = run_pp_trajectories(&params, 0.01, &IntegratorConfig::pp_default());
        let report = PpGuardReport::from_outcomes(&outcomes, params.n_atoms);
        assert_eq!(report.n_launched, 300);
        assert_eq!(report.n_diverged, 0);
        assert!(report.peak_occupation > 0.9, "reference mode holds most atoms");
    }
}
