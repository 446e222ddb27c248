//! Second-order perturbative solution of the three-mode transfer at small
//! times, and the matching small-transfer expansion of the quantum Fisher
//! information.
//!
//! These series keep atom depletion to leading order, which is what
//! distinguishes them from the beam-splitter closed forms: they predict the
//! 1.53/N_t sensitivity floor as the transferred fraction goes to zero.
//! Every multi-line polynomial is split into named sub-terms so each piece
//! can be pinned by its own test; transcription slips are the main defect
//! risk in this module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{photon_number, MAX_SQUEEZE_R};
use crate::optimize::golden_section_minimize;

fn check_args(r: f64, tau: f64, n_atoms: f64) {
    assert!(
        r.is_finite() && (0.0..=MAX_SQUEEZE_R).contains(&r),
        "squeeze parameter {r} outside [0, {MAX_SQUEEZE_R}]"
    );
    assert!(tau.is_finite() && tau >= 0.0, "tau must be non-negative, got {tau}");
    assert!(n_atoms > 0.0, "n_atoms must be positive, got {n_atoms}");
}

/// Mean atom number remaining in the reference mode after time tau:
/// N_t(1 - tau^2 [1 - (tau^2/8)(3 cosh 2r + 1)] sinh^2 r).
pub fn heun_na1(r: f64, tau: f64, n_atoms: f64) -> f64 {
    check_args(r, tau, n_atoms);
    let t2 = tau * tau;
    n_atoms * (1.0 - t2 * (1.0 - t2 / 8.0 * (3.0 * (2.0 * r).cosh() + 1.0)) * photon_number(r))
}

/// Phase response of the recycled signal at the operating point:
/// sqrt(N_t) tau (N_a1(tau) - N_t tau^2 sinh^2 r).
pub fn smallq_slope(r: f64, tau: f64, n_atoms: f64) -> f64 {
    check_args(r, tau, n_atoms);
    n_atoms.sqrt() * tau * (heun_na1(r, tau, n_atoms) - n_atoms * tau * tau * photon_number(r))
}

/// First block of the signal variance: input squeezing carried through the
/// undepleted part of the reference, e^{-2r}(1 - N_t tau^2) N_a1 [...].
pub fn variance_retained_term(r: f64, tau: f64, n_atoms: f64) -> f64 {
    check_args(r, tau, n_atoms);
    let t2 = tau * tau;
    (-2.0 * r).exp()
        * (1.0 - n_atoms * t2)
        * heun_na1(r, tau, n_atoms)
        * (1.0 + n_atoms * t2 * ((2.0 * r).exp() + t2 / 4.0 * (n_atoms - 1.0) - 1.0))
}

/// Second block: the atom-photon interference cross term. Negative in the
/// series' validity window; NaN once N_t tau^2 > 1 where the underlying
/// square root leaves the real axis.
pub fn variance_cross_term(r: f64, tau: f64, n_atoms: f64) -> f64 {
    check_args(r, tau, n_atoms);
    let t2 = tau * tau;
    let t4 = t2 * t2;
    let em2 = (-2.0 * r).exp();
    let radicand = n_atoms * (1.0 - n_atoms * t2) * heun_na1(r, tau, n_atoms);
    -n_atoms
        * t2
        * (-r).exp()
        * r.sinh()
        * radicand.sqrt()
        * (4.0 - t2 / 2.0 * (4.0 * n_atoms + 3.0 * em2 - 1.0)
            + t4 / 16.0
                * (4.0 * n_atoms * ((2.0 * r).exp() + 3.0 * em2 - 2.0)
                    + 6.0 * (3.0 * r).exp() * r.cosh()
                    + 9.0 * em2
                    - 7.0))
}

/// Third block: noise of the transferred quanta themselves, proportional to
/// N_t^2 tau^2.
pub fn variance_transfer_term(r: f64, tau: f64, n_atoms: f64) -> f64 {
    check_args(r, tau, n_atoms);
    let t2 = tau * tau;
    let t4 = t2 * t2;
    let t6 = t4 * t2;
    let t8 = t4 * t4;
    let sh2 = photon_number(r);
    let em2 = (-2.0 * r).exp();
    let ch2r = (2.0 * r).cosh();
    let s2r = (2.0 * r).sinh();
    let line1 = 1.0 - 2.0 * n_atoms * t2 * (-r).exp() * r.sinh()
        + t4 / 4.0
            * (1.0
                + n_atoms * n_atoms
                + n_atoms * (3.0 + 2.0 * (1.0 - 6.0 * em2) * sh2)
                + 1.5 * s2r * s2r);
    let line2 = t6 / 4.0
        * sh2
        * (2.0
            + n_atoms * n_atoms
            + n_atoms / 4.0
                * (-r).exp()
                * (3.0 * (-r).exp() * (3.0 - 5.0 * em2) + r.exp() * (3.0 * (2.0 * r).exp() + 11.0))
            + 6.0 * ch2r);
    let line3 = t8 / 64.0
        * sh2
        * (2.0 * n_atoms * n_atoms * (3.0 * ch2r + 1.0)
            + n_atoms * (15.0 * (2.0 * ch2r + (4.0 * r).cosh()) + 11.0)
            + 1.5 * r.cosh().powi(2) * (35.0 * (4.0 * r).cosh() + 13.0));
    n_atoms * n_atoms * t2 * (line1 - line2 + line3)
}

/// Variance of the recycled signal at the operating point, to the same
/// perturbative order as [`smallq_slope`].
pub fn smallq_variance(r: f64, tau: f64, n_atoms: f64) -> f64 {
    variance_retained_term(r, tau, n_atoms)
        + variance_cross_term(r, tau, n_atoms)
        + variance_transfer_term(r, tau, n_atoms)
}

/// The three additive terms of the sensitivity series, including the common
/// e^{-r}/(N_t tau) prefactor. For r above roughly 1 they scale as
/// e^{-r}/tau, tau e^r and (tau e^r)^3, which is what forces a finite
/// optimal squeezing at fixed transfer time.
pub fn sensitivity_series_terms(r: f64, tau: f64, n_atoms: f64) -> Result<[f64; 3]> {
    check_args(r, tau, n_atoms);
    if tau == 0.0 {
        return Err(Error::SeriesUndefined);
    }
    let prefactor = (-r).exp() / (n_atoms * tau);
    let t2 = tau * tau;
    let sh2 = photon_number(r);
    let depletion = n_atoms * (n_atoms + 3.0 - 2.0 * (-2.0 * r).exp());
    let squeeze = 2.0 * (5.0 * (2.0 * r).cosh() - 6.0) * sh2;
    Ok([
        prefactor,
        prefactor * 1.5 * t2 * sh2,
        prefactor * t2 * t2 / 8.0 * (depletion + squeeze),
    ])
}

/// Phase sensitivity series, valid while tau e^r and tau sqrt(N_t) stay
/// well below one.
pub fn smallq_sensitivity_series(r: f64, tau: f64, n_atoms: f64) -> Result<f64> {
    Ok(sensitivity_series_terms(r, tau, n_atoms)?.iter().sum())
}

/// Trust window of the small-time series. Outside it results are still
/// finite but carry no accuracy claim.
pub fn series_in_window(r: f64, tau: f64, n_atoms: f64) -> bool {
    tau * r.exp() <= 1.0 && n_atoms * tau * tau <= 1.0
}

/// The transfer fraction is a small-expansion parameter only up to about
/// 0.1; the q-parametrized minima below lose accuracy past that.
pub fn smallq_q_in_window(q: f64) -> bool {
    (0.0..=0.1).contains(&q)
}

/// Constant fixing the optimal squeezing schedule r = ln(C/tau):
/// sqrt(2(sqrt(129) - 3)/15).
pub fn optimal_c() -> f64 {
    (2.0 * (129.0f64.sqrt() - 3.0) / 15.0).sqrt()
}

/// Minimum sensitivity at transfer fraction q with the optimal squeezing
/// schedule: [(5/32)C^3 + (3/8)C + (1 + q^2/8)/C] / N_t. Approaches
/// 1.527/N_t as q goes to zero, growing only quadratically in q.
pub fn smallq_min_sensitivity(q: f64, n_atoms: f64) -> Result<f64> {
    if !q.is_finite() || q <= 0.0 {
        return Err(Error::InvalidQ(q));
    }
    let c = optimal_c();
    Ok((5.0 / 32.0 * c.powi(3) + 3.0 / 8.0 * c + (1.0 + q * q / 8.0) / c) / n_atoms)
}

/// Squeezing minimizing the sensitivity series at fixed transfer fraction:
/// ln(C sqrt(N_t/q)).
pub fn smallq_opt_r(q: f64, n_atoms: f64) -> Result<f64> {
    if !q.is_finite() || q <= 0.0 {
        return Err(Error::InvalidQ(q));
    }
    Ok((optimal_c() * (n_atoms / q).sqrt()).ln())
}

/// Coefficient of N_t in the small-time quantum Fisher information.
pub fn qfi_coeff_linear(r: f64, tau: f64) -> f64 {
    let t4 = tau.powi(4);
    let sh2 = photon_number(r);
    let s2r = (2.0 * r).sinh();
    1.0 + t4 / 16.0 * (3.0 * (4.0 * r).cosh() + 1.0)
        - tau.powi(6) / 2.0 * (3.0 * (2.0 * r).cosh() + 1.0) * sh2
        + 3.0 / 512.0 * tau.powi(8) * (35.0 * (4.0 * r).cosh() + 13.0) * s2r * s2r
}

/// Coefficient of N_t^2 in the small-time quantum Fisher information.
pub fn qfi_coeff_quadratic(r: f64, tau: f64) -> f64 {
    let sh = r.sinh();
    let sh2 = sh * sh;
    tau.powi(2) * ((2.0 * r).exp() - 1.0)
        - tau.powi(4) / 4.0
            * (1.0 + 24.0 * r.cosh() * sh2 * sh - 7.0 * (2.0 * r).cosh() + 3.0 * (4.0 * r).cosh())
        + tau.powi(6) / 8.0
            * r.exp()
            * sh2
            * (sh - 10.0 * r.cosh() + 9.0 * (3.0 * r).sinh() + 6.0 * (3.0 * r).cosh())
        + tau.powi(8) / 256.0 * (8.0 - 23.0 * (2.0 * r).cosh() + 15.0 * (6.0 * r).cosh())
}

/// Coefficient of N_t^3 in the small-time quantum Fisher information.
pub fn qfi_coeff_cubic(r: f64, tau: f64) -> f64 {
    tau.powi(4) / 4.0 * (1.0 - tau.powi(2) * photon_number(r))
        + tau.powi(8) / 32.0 * (3.0 * (2.0 * r).cosh() + 1.0) * photon_number(r)
}

/// Quantum Fisher information of the evolved probe to small-time order,
/// a cubic polynomial in atom number.
pub fn qfi_smallq(r: f64, tau: f64, n_atoms: f64) -> f64 {
    check_args(r, tau, n_atoms);
    qfi_coeff_linear(r, tau) * n_atoms
        + qfi_coeff_quadratic(r, tau) * n_atoms * n_atoms
        + qfi_coeff_cubic(r, tau) * n_atoms * n_atoms * n_atoms
}

/// Cramer-Rao phase bound 1/sqrt(F) from the small-time Fisher information.
pub fn qcrb_smallq(r: f64, tau: f64, n_atoms: f64) -> Result<f64> {
    let f = qfi_smallq(r, tau, n_atoms);
    if f <= 0.0 {
        return Err(Error::NonPositiveFisher(f));
    }
    Ok(1.0 / f.sqrt())
}

/// One evaluated point of the small-time expansion with its trust flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallQExpansion {
    pub r: f64,
    pub tau: f64,
    pub n_atoms: f64,
    pub n_a1_tau: f64,
    pub slope: f64,
    pub variance: f64,
    pub delta_phi_series: f64,
    pub qfi: f64,
    pub valid: bool,
}

impl SmallQExpansion {
    pub fn evaluate(r: f64, tau: f64, n_atoms: f64) -> Self {
        check_args(r, tau, n_atoms);
        let delta_phi_series = if tau == 0.0 {
            f64::INFINITY
        } else {
            smallq_sensitivity_series(r, tau, n_atoms).expect("tau > 0 checked above")
        };
        Self {
            r,
            tau,
            n_atoms,
            n_a1_tau: heun_na1(r, tau, n_atoms),
            slope: smallq_slope(r, tau, n_atoms),
            variance: smallq_variance(r, tau, n_atoms),
            delta_phi_series,
            qfi: qfi_smallq(r, tau, n_atoms),
            valid: series_in_window(r, tau, n_atoms),
        }
    }
}

/// Find the minimum of a decreasing-then-increasing r profile of the
/// sensitivity series at fixed tau. Used as an oracle against
/// [`smallq_opt_r`] and by the squeezing optimizer's analytic seed.
pub fn minimize_series_over_r(tau: f64, n_atoms: f64, r_lo: f64, r_hi: f64) -> (f64, f64) {
    golden_section_minimize(
        |r| smallq_sensitivity_series(r, tau, n_atoms).unwrap_or(f64::INFINITY),
        r_lo,
        r_hi,
        1e-9,
    )
}
