//! Phase sensitivity from moment records.
//!
//! Builds the information-recycled interferometer signal at the pi/2
//! operating point, propagates Monte Carlo errors through the nonlinear
//! sensitivity formula, and evaluates the quantum Fisher information and
//! the Cramer-Rao bound.
//!
//! The recycled signal mixes the atomic population-difference signal with
//! the homodyne phase quadrature of the light left behind by an imperfect
//! state transfer. With transfer efficiency q, the optimally weighted
//! combination has
//!
//! ```text
//! V(S)  = 4 q V(Jx) + (1 - q) <N_a1> V(Yb) - 4 sqrt(q (1-q) <N_a1>) Cov(Jx, Yb)
//! slope = 2 sqrt(q) |<Jz>|
//! ```
//!
//! The cross term carries a minus sign: Cov(Jx, Yb) > 0 for a squeezed
//! input under the transfer dynamics, and only the subtracting combination
//! cancels the vacuum noise admitted through the open port. All functions
//! here are pure transformations of immutable moment records and are safe
//! to call concurrently.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{EnsembleMoments, MomentSet};
use crate::stats::{batch_mean_cov, batch_mean_se, MeanSe};

/// Slack allowed on a measured transfer efficiency before it is rejected
/// as inconsistent rather than merely noisy.
pub const Q_SLACK: f64 = 0.05;

/// How the numbers feeding a sensitivity were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tw,
    Pp,
    AnalyticBs,
    AnalyticSmallQ,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Tw => "tw",
            Method::Pp => "pp",
            Method::AnalyticBs => "analytic_bs",
            Method::AnalyticSmallQ => "analytic_smallq",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tw" => Ok(Method::Tw),
            "pp" => Ok(Method::Pp),
            "analytic_bs" => Ok(Method::AnalyticBs),
            "analytic_smallq" => Ok(Method::AnalyticSmallQ),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Signal statistics at the operating point, recycled and atoms-only.
///
/// The covariance fields are the covariances of the pooled (variance, slope)
/// estimates, on the same scale as the squared standard errors; they feed
/// the delta-method error propagation in [`sensitivity`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalMoments {
    pub variance_s: MeanSe,
    pub slope_magnitude: MeanSe,
    pub variance_s_atoms_only: MeanSe,
    pub slope_atoms_only: MeanSe,
    pub q_used: MeanSe,
    pub cov_variance_slope: f64,
    pub cov_variance_slope_atoms: f64,
}

/// A phase sensitivity with its error bar and provenance.
///
/// [`sensitivity`] fills the `delta_phi` fields and leaves `qcrb` and `tau`
/// as NaN; callers attach those with [`SensitivityResult::with_qcrb`] and
/// [`SensitivityResult::with_tau`] once they are known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub delta_phi: f64,
    pub delta_phi_se: f64,
    pub qcrb: f64,
    pub qcrb_se: f64,
    pub q_measured: f64,
    pub tau: f64,
    pub method: Method,
}

impl SensitivityResult {
    pub fn with_qcrb(mut self, qcrb: MeanSe) -> Self {
        self.qcrb = qcrb.value;
        self.qcrb_se = qcrb.se;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }
}

/// Recycled-signal variance and slope from one set of moments at fixed q.
fn recycled_pieces(ms: &MomentSet, q: f64) -> (f64, f64) {
    let n_a1 = ms.n_a1.max(0.0);
    let variance = 4.0 * q * ms.var_jx() + (1.0 - q) * n_a1 * ms.var_yb()
        - 4.0 * (q * (1.0 - q) * n_a1).sqrt() * ms.cov_jx_yb();
    let slope = 2.0 * q.sqrt() * ms.jz.abs();
    (variance, slope)
}

/// Bare atomic signal variance and slope (weights of the q = 1 limit).
fn atoms_pieces(ms: &MomentSet) -> (f64, f64) {
    (4.0 * ms.var_jx(), 2.0 * ms.jz.abs())
}

fn guard_nonnegative_variance(v: MeanSe, what: &'static str) -> Result<MeanSe> {
    if v.value >= 0.0 {
        return Ok(v);
    }
    if v.value < -3.0 * v.se {
        return Err(Error::NegativeVariance {
            what,
            value: v.value,
        });
    }
    Ok(MeanSe::new(0.0, v.se))
}

/// Builds the recycled and atoms-only signal statistics from an ensemble,
/// weighting by the measured transfer efficiency.
///
/// `n_b0` is the mean input photon number, the denominator of q. When the
/// ensemble carries no defined q (no input photons), the recycled signal
/// degenerates to the bare atomic one and q is reported as exactly 1.
///
/// Standard errors come from re-evaluating the signal functionals on each
/// trajectory batch at fixed q; the covariance between the variance and
/// slope estimates is retained for downstream delta-method propagation.
pub fn signal_moments_at_operating_point(
    m: &EnsembleMoments,
    n_b0: f64,
) -> Result<SignalMoments> {
    for (value, what) in [
        (m.mean.jx_yb, "Jx-Yb covariance"),
        (m.mean.yb, "Yb mean"),
        (m.mean.yb2, "Yb second moment"),
    ] {
        if !value.is_finite() {
            return Err(Error::MissingCovariance(what));
        }
    }

    let (variance_atoms, slope_atoms) = atoms_pieces(&m.mean);
    let atoms_batches: Vec<(f64, f64)> = m.batches.iter().map(atoms_pieces).collect();
    let (var_atoms_se, slope_atoms_se, cov_atoms) = batch_spread(&atoms_batches);

    if !m.qst.defined {
        // No photons to recycle; the signal is the atomic one.
        let variance = guard_nonnegative_variance(
            MeanSe::new(variance_atoms, var_atoms_se),
            "signal variance",
        )?;
        return Ok(SignalMoments {
            variance_s: variance,
            slope_magnitude: MeanSe::new(slope_atoms, slope_atoms_se),
            variance_s_atoms_only: variance,
            slope_atoms_only: MeanSe::new(slope_atoms, slope_atoms_se),
            q_used: MeanSe::exact(1.0),
            cov_variance_slope: cov_atoms,
            cov_variance_slope_atoms: cov_atoms,
        });
    }

    if n_b0 <= 0.0 || !n_b0.is_finite() {
        return Err(Error::InvalidQ(f64::NAN));
    }
    if !(-Q_SLACK..=1.0 + Q_SLACK).contains(&m.qst.raw) {
        return Err(Error::InvalidQ(m.qst.raw));
    }
    let q = m.qst.value;

    let (variance_s, slope) = recycled_pieces(&m.mean, q);
    let recycled_batches: Vec<(f64, f64)> = m
        .batches
        .iter()
        .map(|b| recycled_pieces(b, q))
        .collect();
    let (var_se, slope_se, cov) = batch_spread(&recycled_batches);

    Ok(SignalMoments {
        variance_s: guard_nonnegative_variance(
            MeanSe::new(variance_s, var_se),
            "recycled signal variance",
        )?,
        slope_magnitude: MeanSe::new(slope, slope_se),
        variance_s_atoms_only: guard_nonnegative_variance(
            MeanSe::new(variance_atoms, var_atoms_se),
            "atomic signal variance",
        )?,
        slope_atoms_only: MeanSe::new(slope_atoms, slope_atoms_se),
        q_used: MeanSe::new(q, m.qst.se),
        cov_variance_slope: cov,
        cov_variance_slope_atoms: cov_atoms,
    })
}

/// Signal statistics from exact moments at a known q: the pure-formula
/// path used by the analytic models, with zero standard errors.
pub fn signal_moments_from_exact(ms: &MomentSet, q: f64) -> Result<SignalMoments> {
    if !q.is_finite() || !(-Q_SLACK..=1.0 + Q_SLACK).contains(&q) {
        return Err(Error::InvalidQ(q));
    }
    let q = q.clamp(0.0, 1.0);
    if !ms.jx_yb.is_finite() {
        return Err(Error::MissingCovariance("Jx-Yb covariance"));
    }
    let (variance_s, slope) = recycled_pieces(ms, q);
    let (variance_atoms, slope_atoms) = atoms_pieces(ms);
    Ok(SignalMoments {
        variance_s: MeanSe::exact(variance_s),
        slope_magnitude: MeanSe::exact(slope),
        variance_s_atoms_only: MeanSe::exact(variance_atoms),
        slope_atoms_only: MeanSe::exact(slope_atoms),
        q_used: MeanSe::exact(q),
        cov_variance_slope: 0.0,
        cov_variance_slope_atoms: 0.0,
    })
}

fn batch_spread(batches: &[(f64, f64)]) -> (f64, f64, f64) {
    if batches.len() < 2 {
        return (0.0, 0.0, 0.0);
    }
    let first: Vec<f64> = batches.iter().map(|b| b.0).collect();
    let second: Vec<f64> = batches.iter().map(|b| b.1).collect();
    (
        batch_mean_se(&first).se,
        batch_mean_se(&second).se,
        batch_mean_cov(&first, &second),
    )
}

fn delta_method_se(variance: MeanSe, slope: MeanSe, cov: f64) -> f64 {
    if variance.value <= 0.0 {
        // The sqrt derivative is singular at zero. A variance estimate
        // clamped to zero but uncertain by se spans sensitivities up to
        // about sqrt(se)/slope, and that scale is the honest error bar; an
        // exactly known zero keeps a zero bar.
        if variance.se > 0.0 && slope.value > 0.0 {
            return variance.se.sqrt() / slope.value;
        }
        return 0.0;
    }
    let root = variance.value.sqrt();
    let d_var = 1.0 / (2.0 * root * slope.value);
    let d_slope = -root / (slope.value * slope.value);
    let var = d_var * d_var * variance.se * variance.se
        + d_slope * d_slope * slope.se * slope.se
        + 2.0 * d_var * d_slope * cov;
    var.max(0.0).sqrt()
}

/// Phase sensitivity of the recycled signal: sqrt(V(S)) / |slope|, with a
/// first-order delta-method standard error that includes the covariance
/// between the variance and slope estimates.
///
/// The returned record carries only the `delta_phi` fields; `qcrb` and
/// `tau` are NaN until attached by the caller.
pub fn sensitivity(sm: &SignalMoments, method: Method) -> Result<SensitivityResult> {
    if sm.slope_magnitude.value <= 0.0 {
        return Err(Error::ZeroSlope);
    }
    let delta_phi = sm.variance_s.value.max(0.0).sqrt() / sm.slope_magnitude.value;
    let delta_phi_se = delta_method_se(sm.variance_s, sm.slope_magnitude, sm.cov_variance_slope);
    Ok(SensitivityResult {
        delta_phi,
        delta_phi_se,
        qcrb: f64::NAN,
        qcrb_se: f64::NAN,
        q_measured: sm.q_used.value,
        tau: f64::NAN,
        method,
    })
}

/// Sensitivity of the bare atomic signal, the no-recycling comparison.
pub fn atoms_only_sensitivity(sm: &SignalMoments) -> Result<MeanSe> {
    if sm.slope_atoms_only.value <= 0.0 {
        return Err(Error::ZeroSlope);
    }
    let value = sm.variance_s_atoms_only.value.max(0.0).sqrt() / sm.slope_atoms_only.value;
    let se = delta_method_se(
        sm.variance_s_atoms_only,
        sm.slope_atoms_only,
        sm.cov_variance_slope_atoms,
    );
    Ok(MeanSe::new(value, se))
}

/// Quantum Fisher information for phase estimation with the pre-rotation
/// state: F = 4 V(Jy), estimated with a batch-means standard error.
///
/// A small negative value is statistical noise around a near-pure squeezed
/// variance and is passed through; a negative value beyond three standard
/// errors means broken ordering corrections and is an error.
pub fn qfi_from_moments(m: &EnsembleMoments) -> Result<MeanSe> {
    let value = 4.0 * m.mean.var_jy();
    let batch_values: Vec<f64> = m.batches.iter().map(|b| 4.0 * b.var_jy()).collect();
    let se = if batch_values.len() >= 2 {
        batch_mean_se(&batch_values).se
    } else {
        0.0
    };
    if value < -3.0 * se {
        return Err(Error::NegativeVariance {
            what: "quantum Fisher information",
            value,
        });
    }
    Ok(MeanSe::new(value, se))
}

/// Quantum Cramer-Rao bound 1/sqrt(F), with the propagated standard error.
pub fn qcrb(fisher: MeanSe) -> Result<MeanSe> {
    if !(fisher.value > 0.0) {
        return Err(Error::NonPositiveFisher(fisher.value));
    }
    let value = 1.0 / fisher.value.sqrt();
    let se = fisher.se / (2.0 * fisher.value.powf(1.5));
    Ok(MeanSe::new(value, se))
}

/// Leave-one-batch-out jackknife standard error of the sensitivity, a
/// verification mode for the delta-method error bar.
pub fn sensitivity_se_jackknife(m: &EnsembleMoments, n_b0: f64) -> Result<f64> {
    let sm = signal_moments_at_operating_point(m, n_b0)?;
    if sm.slope_magnitude.value <= 0.0 {
        return Err(Error::ZeroSlope);
    }
    let q = sm.q_used.value;
    let pieces: Vec<(f64, f64)> = if m.qst.defined {
        m.batches.iter().map(|b| recycled_pieces(b, q)).collect()
    } else {
        m.batches.iter().map(atoms_pieces).collect()
    };
    let k = pieces.len();
    if k < 2 {
        return Err(Error::InsufficientEnsemble(k));
    }
    let (tot_v, tot_s) = pieces
        .iter()
        .fold((0.0, 0.0), |(av, as_), (v, s)| (av + v, as_ + s));
    let loo: Vec<f64> = pieces
        .iter()
        .map(|(v, s)| {
            let vv = ((tot_v - v) / (k - 1) as f64).max(0.0);
            let ss = (tot_s - s) / (k - 1) as f64;
            vv.sqrt() / ss
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / k as f64;
    let ss: f64 = loo.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(((k - 1) as f64 / k as f64 * ss).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic_bs::{bs_exact_moments, bs_sensitivity};
    use crate::engine::Engine;
    use crate::model::ModelParams;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn exact_sensitivity(r: f64, q: f64, n_atoms: f64) -> f64 {
        let ms = bs_exact_moments(r, q, n_atoms).unwrap();
        let sm = signal_moments_from_exact(&ms, q).unwrap();
        sensitivity(&sm, Method::AnalyticBs).unwrap().delta_phi
    }

    #[test]
    fn coherent_state_reaches_the_standard_quantum_limit() {
        assert_abs_diff_eq!(exact_sensitivity(0.0, 1.0, 1.0e4), 1.0e-2, epsilon = 1e-15);
    }

    #[test]
    fn full_transfer_matches_the_beamsplitter_closed_form() {
        // The pipeline keeps the full photon-number contribution the compact
        // closed form drops, so agreement is approximate at modest atom
        // number and tightens as the transferred fraction shrinks.
        let got = exact_sensitivity(2.0, 1.0, 1.0e4);
        let compact = bs_sensitivity(2.0, 1.0, 1.0e4).unwrap();
        assert_relative_eq!(got, compact, max_relative = 1e-3);
        assert_relative_eq!(got, 1.404e-3, max_relative = 1e-3);

        let got = exact_sensitivity(1.0, 0.5, 1.0e6);
        let compact = bs_sensitivity(1.0, 0.5, 1.0e6).unwrap();
        assert_relative_eq!(got, compact, max_relative = 1e-5);
    }

    #[test]
    fn sensitivity_is_exactly_root_variance_over_slope() {
        let ms = bs_exact_moments(1.7, 0.3, 2.0e5).unwrap();
        let sm = signal_moments_from_exact(&ms, 0.3).unwrap();
        let got = sensitivity(&sm, Method::AnalyticBs).unwrap().delta_phi;
        assert_eq!(
            got,
            sm.variance_s.value.sqrt() / sm.slope_magnitude.value
        );
    }

    #[test]
    fn zero_transfer_has_photon_variance_and_no_slope() {
        let (r, n_atoms) = (1.5, 1.0e4);
        let ms = bs_exact_moments(r, 0.0, n_atoms).unwrap();
        let sm = signal_moments_from_exact(&ms, 0.0).unwrap();
        assert_relative_eq!(
            sm.variance_s.value,
            n_atoms * (-2.0 * r).exp(),
            max_relative = 1e-12
        );
        assert_eq!(sm.slope_magnitude.value, 0.0);
        assert!(matches!(
            sensitivity(&sm, Method::AnalyticBs),
            Err(Error::ZeroSlope)
        ));
    }

    #[test]
    fn no_squeezing_recycled_and_atomic_sensitivities() {
        // Without squeezing the homodyne port carries vacuum: mixing it in
        // dilutes the signal to 1/sqrt(q N) while the bare atomic signal
        // stays at the standard quantum limit.
        let n_atoms = 1.0e4;
        for q in [0.1, 0.4, 0.9] {
            let ms = bs_exact_moments(0.0, q, n_atoms).unwrap();
            let sm = signal_moments_from_exact(&ms, q).unwrap();
            let recycled = sensitivity(&sm, Method::AnalyticBs).unwrap().delta_phi;
            let atoms = atoms_only_sensitivity(&sm).unwrap().value;
            assert_relative_eq!(
                recycled,
                1.0 / (q * n_atoms).sqrt(),
                max_relative = 1e-12
            );
            assert_relative_eq!(atoms, 1.0 / n_atoms.sqrt(), max_relative = 1e-12);
            assert!(recycled >= atoms);
        }
    }

    #[test]
    fn at_full_transfer_recycling_changes_nothing() {
        let ms = bs_exact_moments(2.2, 1.0, 5.0e4).unwrap();
        let sm = signal_moments_from_exact(&ms, 1.0).unwrap();
        let recycled = sensitivity(&sm, Method::AnalyticBs).unwrap().delta_phi;
        let atoms = atoms_only_sensitivity(&sm).unwrap().value;
        assert_eq!(recycled, atoms);
    }

    #[test]
    fn recycling_beats_the_bare_atomic_signal_where_transfer_is_strong() {
        // The recycled estimator wins whenever exp(-2r) <= q/(1+q); below
        // that the homodyne port admits more vacuum than it removes. All
        // grid points here satisfy the condition.
        for r in [1.0, 2.0, 3.0] {
            for q in [0.3, 0.5, 0.8] {
                let ms = bs_exact_moments(r, q, 1.0e6).unwrap();
                let sm = signal_moments_from_exact(&ms, q).unwrap();
                let recycled = sensitivity(&sm, Method::AnalyticBs).unwrap().delta_phi;
                let atoms = atoms_only_sensitivity(&sm).unwrap().value;
                assert!(
                    recycled <= atoms,
                    "recycled {recycled} vs atoms {atoms} at r={r}, q={q}"
                );
            }
        }
    }

    #[test]
    fn slope_ignores_the_photon_quadrature() {
        let mut ms = bs_exact_moments(1.2, 0.4, 1.0e4).unwrap();
        let sm0 = signal_moments_from_exact(&ms, 0.4).unwrap();
        ms.yb += 0.3;
        ms.yb2 += 2.0;
        ms.jx_yb += 1.0;
        let sm1 = signal_moments_from_exact(&ms, 0.4).unwrap();
        assert_eq!(sm0.slope_magnitude, sm1.slope_magnitude);
        assert_ne!(sm0.variance_s.value, sm1.variance_s.value);
    }

    #[test]
    fn cramer_rao_bound_arithmetic() {
        assert_abs_diff_eq!(
            qcrb(MeanSe::exact(1.0e4)).unwrap().value,
            1.0e-2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            qcrb(MeanSe::exact(2.0e8)).unwrap().value,
            7.0710678118654746e-5,
            epsilon = 1e-18
        );
        let with_error = qcrb(MeanSe::new(1.0e4, 200.0)).unwrap();
        assert_relative_eq!(with_error.se, 200.0 / (2.0 * 1.0e6), max_relative = 1e-12);
        assert!(matches!(
            qcrb(MeanSe::exact(0.0)),
            Err(Error::NonPositiveFisher(_))
        ));
        assert!(matches!(
            qcrb(MeanSe::exact(-3.0)),
            Err(Error::NonPositiveFisher(_))
        ));
    }

    #[test]
    fn out_of_range_efficiency_is_rejected() {
        let ms = bs_exact_moments(1.0, 0.5, 1.0e4).unwrap();
        assert!(matches!(
            signal_moments_from_exact(&ms, 1.2),
            Err(Error::InvalidQ(_))
        ));
        assert!(matches!(
            signal_moments_from_exact(&ms, -0.2),
            Err(Error::InvalidQ(_))
        ));
        // Within the noise slack the value is accepted and clamped.
        let sm = signal_moments_from_exact(&ms, 1.02).unwrap();
        assert_eq!(sm.q_used.value, 1.0);
    }

    #[test]
    fn monte_carlo_fisher_information_of_a_coherent_state() {
        let params = ModelParams::new(400.0, 0.8)
            .unwrap()
            .with_trajectories(5_000)
            .with_seed(11);
        let m = Engine::Tw.run(&params, 0.0).unwrap();
        let fisher = qfi_from_moments(&m).unwrap();
        // Before any transfer the atoms are a coherent spin state along x,
        // so F = 4 V(Jy) = N regardless of the photon squeezing.
        assert!(
            (fisher.value - 400.0).abs() <= 3.0 * fisher.se,
            "F = {} +- {}",
            fisher.value,
            fisher.se
        );
        let bound = qcrb(fisher).unwrap();
        assert!((bound.value - 0.05).abs() <= 3.0 * bound.se);
    }

    #[test]
    fn delta_method_and_jackknife_error_bars_agree() {
        let params = ModelParams::new(100.0, 0.5)
            .unwrap()
            .with_trajectories(2_000)
            .with_seed(7);
        let tau = 0.3 / 100.0_f64.sqrt();
        let m = Engine::Tw.run(&params, tau).unwrap();
        let n_b0 = params.photon_number();
        let sm = signal_moments_at_operating_point(&m, n_b0).unwrap();
        let delta = sensitivity(&sm, Method::Tw).unwrap();
        let jack = sensitivity_se_jackknife(&m, n_b0).unwrap();
        assert!(delta.delta_phi_se > 0.0);
        let ratio = jack / delta.delta_phi_se;
        assert!(
            (0.5..=2.0).contains(&ratio),
            "jackknife/delta ratio {ratio}"
        );
    }

    #[test]
    fn undefined_efficiency_falls_back_to_the_atomic_signal() {
        let params = ModelParams::new(256.0, 0.0)
            .unwrap()
            .with_trajectories(2_000)
            .with_seed(3);
        let tau = 0.2 / 16.0;
        let m = Engine::Tw.run(&params, tau).unwrap();
        assert!(!m.qst.defined);
        let sm = signal_moments_at_operating_point(&m, 0.0).unwrap();
        assert_eq!(sm.q_used.value, 1.0);
        assert_eq!(sm.variance_s, sm.variance_s_atoms_only);
        let s = sensitivity(&sm, Method::Tw).unwrap();
        let a = atoms_only_sensitivity(&sm).unwrap();
        assert_eq!(s.delta_phi, a.value);
    }
}
