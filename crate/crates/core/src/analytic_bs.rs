//! Closed forms for the beam-splitter model of the atom-light interface.
//!
//! When atom depletion is negligible the quantum state transfer acts on the
//! second atomic mode and the squeezed input like a beam splitter with
//! reflectivity q = sin^2(g sqrt(N_t) t). Everything here follows from that
//! linear map applied to a coherent reference mode, an initially empty
//! transfer mode and squeezed vacuum.

use crate::error::{Error, Result};
use crate::model::photon_number;
use crate::moments::MomentSet;
use crate::optimize::golden_section_minimize;

fn check_q(q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) || !q.is_finite() {
        return Err(Error::InvalidQ(q));
    }
    Ok(q)
}

/// Variance of the recycled phase signal at the operating point.
///
/// The vacuum contributions of the two detection channels interfere
/// destructively, leaving the squeezed quadrature N_t e^{-2r} plus the
/// transferred photons' own noise.
pub fn bs_variance(r: f64, q: f64, n_atoms: f64) -> Result<f64> {
    let q = check_q(q)?;
    Ok(n_atoms * (-2.0 * r).exp() + q * (q - (-2.0 * r).exp()) * photon_number(r))
}

/// Phase response of the recycled signal, d<S>/dphi at the operating point.
///
/// Fails with `DepletedRegime` once the transferred photons have consumed
/// half the atomic reference, where the fringe inverts.
pub fn bs_slope(r: f64, q: f64, n_atoms: f64) -> Result<f64> {
    let q = check_q(q)?;
    let remaining = n_atoms - 2.0 * q * photon_number(r);
    if remaining <= 0.0 {
        return Err(Error::DepletedRegime { r, q, n_atoms });
    }
    Ok(q.sqrt() * remaining)
}

/// Phase sensitivity sqrt(V)/|slope| of the recycled readout.
pub fn bs_sensitivity(r: f64, q: f64, n_atoms: f64) -> Result<f64> {
    if q == 0.0 {
        return Err(Error::ZeroSlope);
    }
    Ok(bs_variance(r, q, n_atoms)?.sqrt() / bs_slope(r, q, n_atoms)?)
}

/// Sensitivity of the bare atomic readout, 2 J_x against slope 2|<J_z>|,
/// without the recycled photonic channel. Equals 1/sqrt(N_t) when the
/// transfer leaves the reference intact.
pub fn bs_sensitivity_atoms_only(r: f64, q: f64, n_atoms: f64) -> Result<f64> {
    let q = check_q(q)?;
    let var4 = n_atoms * (1.0 - q + q * (-2.0 * r).exp()) + q * photon_number(r);
    let remaining = n_atoms - 2.0 * q * photon_number(r);
    if remaining <= 0.0 {
        return Err(Error::DepletedRegime { r, q, n_atoms });
    }
    Ok(var4.sqrt() / remaining)
}

/// Strong-squeezing approximation sqrt(N_t e^{-2r} + q^2 e^{2r}/4)/(sqrt(q) N_t).
pub fn bs_sensitivity_approx(r: f64, q: f64, n_atoms: f64) -> Result<f64> {
    if q == 0.0 {
        return Err(Error::ZeroSlope);
    }
    let q = check_q(q)?;
    let v = n_atoms * (-2.0 * r).exp() + q * q * (2.0 * r).exp() / 4.0;
    Ok(v.sqrt() / (q.sqrt() * n_atoms))
}

/// Squeezing that balances residual vacuum noise against transferred-photon
/// noise at fixed q: r = ln(4 N_t / q^2)/4.
pub fn bs_opt_r(q: f64, n_atoms: f64) -> Result<f64> {
    let q = check_q(q)?;
    if q == 0.0 {
        return Err(Error::ZeroSlope);
    }
    Ok((4.0 * n_atoms / (q * q)).ln() / 4.0)
}

/// Squeezing beyond which full transfer (q = 1) stops being optimal.
pub fn bs_r_crit(n_atoms: f64) -> f64 {
    (4.0 * n_atoms).ln() / 4.0
}

/// Exact minimum of `bs_sensitivity` over r at fixed q, with the argmin.
///
/// The balance approximation puts the floor at N_t^{-3/4} for every q; the
/// exact minimum sits slightly above because depletion steepens the
/// variance near its balance point.
pub fn bs_min_sensitivity(q: f64, n_atoms: f64) -> Result<(f64, f64)> {
    let q = check_q(q)?;
    if q == 0.0 {
        return Err(Error::ZeroSlope);
    }
    // depletion bound: sinh^2 r < N_t/(2q)
    let r_dep = (n_atoms / (2.0 * q)).sqrt().asinh();
    let f = |r: f64| bs_sensitivity(r, q, n_atoms).unwrap_or(f64::INFINITY);
    let (r_min, val) = golden_section_minimize(f, 1e-6, r_dep * (1.0 - 1e-9), 1e-10);
    Ok((r_min, val))
}

/// Quantum Fisher information of the beam-splitter state, 4 V(J_y).
pub fn bs_quantum_fisher(r: f64, q: f64, n_atoms: f64) -> Result<f64> {
    let q = check_q(q)?;
    Ok(n_atoms * (1.0 - q + q * (2.0 * r).exp()) + q * photon_number(r))
}

/// Full first and second moments of the post-transfer state.
///
/// Serves as the closed-form endpoint of the moment pipeline and as an
/// oracle for the trajectory engines in the undepleted regime.
pub fn bs_exact_moments(r: f64, q: f64, n_atoms: f64) -> Result<MomentSet> {
    let q = check_q(q)?;
    let nb = photon_number(r);
    let em = (-2.0 * r).exp();
    let ep = (2.0 * r).exp();
    let n_mean = q * nb;
    let pair_sq = q * q * nb * (nb + 1.0); // |<a2^2>|^2 of the reflected squeezing
    let jz = 0.5 * (n_atoms - 2.0 * q * nb);
    let var_jz = 0.25 * (n_atoms + n_mean * (n_mean + 1.0) + pair_sq);
    let var_jx = 0.25 * (n_atoms * (1.0 - q + q * em) + q * nb);
    let var_jy = 0.25 * (n_atoms * (1.0 - q + q * ep) + q * nb);
    Ok(MomentSet {
        n_a1: n_atoms - q * nb,
        n_a2: q * nb,
        n_b: (1.0 - q) * nb,
        jx: 0.0,
        jy: 0.0,
        jz,
        jx2: var_jx,
        jy2: var_jy,
        jz2: var_jz + jz * jz,
        yb: 0.0,
        yb2: (1.0 - q) * em + q,
        jx_yb: 0.5 * n_atoms.sqrt() * (q * (1.0 - q)).sqrt() * (1.0 - em),
    })
}
