//! Runtime self-checks: conservation laws, ordering corrections, sampler
//! identities, engine cross-agreement, statistical orderings and
//! reproducibility. Each check reports a margin (measured over allowed, so
//! anything at or below 1 passes) and enough detail to debug a failure.

use serde::{Deserialize, Serialize};
use squeezelab_core::optimize::evaluate_point;
use squeezelab_core::pp::run_pp_trajectories;
use squeezelab_core::tw::run_tw;
use squeezelab_core::{Engine, IntegratorConfig, ModelParams};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

/// Trajectory budget for the self-checks; capped so the full suite stays
/// well under its runtime budget regardless of the configured sweep size.
const MAX_CHECK_TRAJECTORIES: usize = 10_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    /// Measured quantity divided by its allowance; at most 1 when passing.
    pub margin: f64,
    pub detail: String,
}

impl Check {
    fn from_margin(name: &str, margin: f64, detail: String) -> Self {
        Check {
            name: name.to_string(),
            pass: margin.is_finite() && margin <= 1.0,
            margin,
            detail,
        }
    }

    fn error(name: &str, err: &squeezelab_core::Error) -> Self {
        Check {
            name: name.to_string(),
            pass: false,
            margin: f64::INFINITY,
            detail: format!("errored: {err}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn failed(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }

    pub fn all_pass(&self) -> bool {
        self.failed() == 0
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.pass { "PASS" } else { "FAIL" };
            out.push_str(&format!(
                "{status} {name} margin={margin:.3} {detail}\n",
                name = c.name,
                margin = c.margin,
                detail = c.detail
            ));
        }
        out.push_str(&format!(
            "{} of {} checks passed\n",
            self.checks.len() - self.failed(),
            self.checks.len()
        ));
        out
    }

    pub fn into_result(self) -> Result<ValidationReport> {
        if self.all_pass() {
            Ok(self)
        } else {
            Err(HarnessError::Validation {
                failed: self.failed(),
                total: self.checks.len(),
            })
        }
    }
}

fn check_trajectories(cfg: &ExperimentConfig) -> usize {
    cfg.n_trajectories.min(MAX_CHECK_TRAJECTORIES)
}

/// Initial-ensemble run: zero interaction, a single integration step.
fn sampling_config() -> IntegratorConfig {
    IntegratorConfig {
        n_steps: 1,
        ..IntegratorConfig::tw_default()
    }
}

/// Per-trajectory conservation of the pairing charges through integration.
fn tw_charge_conservation(cfg: &ExperimentConfig) -> Check {
    const ALLOWED: f64 = 1.0e-8;
    let params = ModelParams::new(400.0, 1.5)
        .expect("static params")
        .with_seed(cfg.master_seed)
        .with_trajectories(check_trajectories(cfg).min(2_000));
    match run_tw(&params, 0.05, &IntegratorConfig::tw_default()) {
        Ok(m) => Check::from_margin(
            "tw_charge_conservation",
            m.max_charge_drift / ALLOWED,
            format!("max drift {:.3e} allowed {ALLOWED:.0e}", m.max_charge_drift),
        ),
        Err(e) => Check::error("tw_charge_conservation", &e),
    }
}

/// Zero-time estimators against the Gaussian input state at sweep scale.
fn tw_initial_moments(cfg: &ExperimentConfig) -> Check {
    let n = 1.0e4;
    let r = 2.0;
    let params = ModelParams::new(n, r)
        .expect("static params")
        .with_seed(cfg.master_seed ^ 0x5eed)
        .with_trajectories(check_trajectories(cfg));
    let m = match run_tw(&params, 0.0, &sampling_config()) {
        Ok(m) => m,
        Err(e) => return Check::error("tw_initial_moments", &e),
    };
    let sh2 = r.sinh() * r.sinh();
    let sigmas = [
        ((m.mean.n_b - sh2) / m.se.n_b).abs(),
        ((m.mean.jz - n / 2.0) / m.se.jz).abs(),
        ((m.mean.var_yb() - (-2.0 * r).exp()) / m.se.yb2).abs(),
        ((m.mean.var_jx() - n / 4.0) / m.se.jx2).abs(),
    ];
    let worst = sigmas.iter().cloned().fold(0.0, f64::max);
    Check::from_margin(
        "tw_initial_moments",
        worst / 4.0,
        format!("worst estimator distance {worst:.2} sigma, allowed 4"),
    )
}

/// Ordering corrections at few-atom scale, where dropping the spin-squared
/// correction shifts the variance by 12% instead of parts per million.
fn tw_ordering_correction(cfg: &ExperimentConfig) -> Check {
    let n = 4.0;
    let params = ModelParams::new(n, 0.8)
        .expect("static params")
        .with_seed(cfg.master_seed ^ 0xa11)
        .with_trajectories(check_trajectories(cfg));
    let m = match run_tw(&params, 0.0, &sampling_config()) {
        Ok(m) => m,
        Err(e) => return Check::error("tw_ordering_correction", &e),
    };
    // coherent reference ⊗ empty transfer mode: every spin variance is N/4
    let sigmas = [
        ((m.mean.var_jx() - n / 4.0) / m.se.jx2).abs(),
        ((m.mean.var_jy() - n / 4.0) / m.se.jy2).abs(),
        ((m.mean.var_jz() - n / 4.0) / m.se.jz2).abs(),
    ];
    let worst = sigmas.iter().cloned().fold(0.0, f64::max);
    Check::from_margin(
        "tw_ordering_correction",
        worst / 5.0,
        format!("worst spin variance distance {worst:.2} sigma at N={n}, allowed 5"),
    )
}

/// Doubled-phase-space sampler identities for the squeezed input, measured
/// on raw trajectories because the reduced moments only keep quadratures.
fn pp_initial_identities(cfg: &ExperimentConfig) -> Check {
    let r: f64 = 1.0;
    let params = ModelParams::new(100.0, r)
        .expect("static params")
        .with_seed(cfg.master_seed ^ 0xbeef)
        .with_trajectories(check_trajectories(cfg));
    let outcomes = run_pp_trajectories(&params, 0.0, &sampling_config());
    let n = outcomes.len() as f64;
    let mut occ = (0.0, 0.0);
    let mut pair = (0.0, 0.0);
    let mut occ_im = (0.0, 0.0);
    for o in &outcomes {
        let bpb = o.state.bp * o.state.b;
        let bb = (o.state.b * o.state.b).re;
        occ = (occ.0 + bpb.re, occ.1 + bpb.re * bpb.re);
        pair = (pair.0 + bb, pair.1 + bb * bb);
        occ_im = (occ_im.0 + bpb.im, occ_im.1 + bpb.im * bpb.im);
    }
    let stats = |(s, s2): (f64, f64)| {
        let mean = s / n;
        (mean, ((s2 / n - mean * mean).max(0.0) / n).sqrt())
    };
    let (occ_m, occ_se) = stats(occ);
    let (pair_m, pair_se) = stats(pair);
    let (im_m, im_se) = stats(occ_im);
    let sh = r.sinh();
    let targets = [
        ((occ_m - sh * sh) / occ_se).abs(),
        ((pair_m - sh * r.cosh()) / pair_se).abs(),
        (im_m / im_se).abs(),
    ];
    let worst = targets.iter().cloned().fold(0.0, f64::max);
    Check::from_margin(
        "pp_initial_identities",
        worst / 3.0,
        format!(
            "occupation {occ_m:.4} (want {:.4}), pairing {pair_m:.4} (want {:.4}), worst {worst:.2} sigma of 3",
            sh * sh,
            sh * r.cosh()
        ),
    )
}

/// Full-noise cross-check between the two engines away from tau=0; this is
/// where a conjugation slip in the doubled-space noise shows up even though
/// drift-only trajectories stay correct.
fn engine_cross_agreement(cfg: &ExperimentConfig) -> Check {
    let params = ModelParams::new(400.0, 1.0)
        .expect("static params")
        .with_seed(cfg.master_seed ^ 0xcc)
        .with_trajectories(check_trajectories(cfg));
    let tau = 0.02;
    let tw = match Engine::Tw.run(&params, tau) {
        Ok(m) => m,
        Err(e) => return Check::error("engine_cross_agreement", &e),
    };
    let pp = match Engine::Pp.run(&params, tau) {
        Ok(m) => m,
        Err(e) => return Check::error("engine_cross_agreement", &e),
    };
    let pooled = |a: f64, b: f64| (a * a + b * b).sqrt().max(1e-12);
    let sigmas = [
        ((tw.mean.n_a2 - pp.mean.n_a2) / pooled(tw.se.n_a2, pp.se.n_a2)).abs(),
        ((tw.mean.n_b - pp.mean.n_b) / pooled(tw.se.n_b, pp.se.n_b)).abs(),
        ((tw.mean.var_yb() - pp.mean.var_yb()) / pooled(tw.se.yb2, pp.se.yb2)).abs(),
    ];
    let worst = sigmas.iter().cloned().fold(0.0, f64::max);
    Check::from_margin(
        "engine_cross_agreement",
        worst / 4.0,
        format!("worst moment distance {worst:.2} pooled sigma, allowed 4"),
    )
}

/// Calibrated evaluations must satisfy the Cramer-Rao ordering and hit the
/// requested transfer efficiency within tolerance (or say they could not).
fn evaluated_point_checks(cfg: &ExperimentConfig) -> (Check, Check) {
    const CALIBRATION_TOL: f64 = 2.0e-3;
    let params = ModelParams::new(2_000.0, 1.2)
        .expect("static params")
        .with_seed(cfg.master_seed ^ 0xf00d)
        .with_trajectories(check_trajectories(cfg));
    let mut worst_cr: f64 = 0.0;
    let mut worst_miss: f64 = 0.0;
    let mut detail_cr = String::new();
    let mut detail_cal = String::new();
    for q in [0.3, 0.8] {
        match evaluate_point(&params, q, Engine::Tw) {
            Ok(p) => {
                let pooled = (p.delta_phi.se.powi(2) + p.qcrb.se.powi(2)).sqrt();
                // ordering margin: how far below the bound minus 2 SE we sit
                let violation = (p.qcrb.value - 2.0 * pooled) - p.delta_phi.value;
                let cr = violation / (2.0 * pooled).max(1e-12) + 1.0;
                worst_cr = worst_cr.max(cr);
                detail_cr.push_str(&format!(
                    "q={q}: dphi={:.4e} qcrb={:.4e}; ",
                    p.delta_phi.value, p.qcrb.value
                ));
                let miss = if p.calibration_converged {
                    p.calibration_miss / CALIBRATION_TOL
                } else {
                    0.0 // an honest refusal is a pass for this check
                };
                worst_miss = worst_miss.max(miss);
                detail_cal.push_str(&format!(
                    "q={q}: measured {:.4} (miss {:.1e}); ",
                    p.q_measured.value, p.calibration_miss
                ));
            }
            Err(e) => {
                return (
                    Check::error("cramer_rao_ordering", &e),
                    Check::error("calibration_tolerance", &e),
                )
            }
        }
    }
    (
        Check::from_margin("cramer_rao_ordering", worst_cr, detail_cr),
        Check::from_margin("calibration_tolerance", worst_miss, detail_cal),
    )
}

/// The same seeded ensemble must reduce to bit-identical moments no matter
/// how many workers integrate it.
fn worker_determinism(cfg: &ExperimentConfig) -> Check {
    let params = ModelParams::new(400.0, 1.5)
        .expect("static params")
        .with_seed(cfg.master_seed)
        .with_trajectories(check_trajectories(cfg).min(4_000));
    let run_in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map(|pool| pool.install(|| run_tw(&params, 0.03, &IntegratorConfig::tw_default())))
    };
    match (run_in_pool(1), run_in_pool(2)) {
        (Ok(Ok(a)), Ok(Ok(b))) => {
            let left = format!("{a:?}");
            let right = format!("{b:?}");
            let equal = left == right;
            Check {
                name: "worker_determinism".into(),
                pass: equal,
                margin: if equal { 0.0 } else { f64::INFINITY },
                detail: if equal {
                    "1-thread and 2-thread ensembles bit-identical".into()
                } else {
                    "ensembles differ between worker counts".into()
                },
            }
        }
        (Ok(Err(e)), _) | (_, Ok(Err(e))) => Check::error("worker_determinism", &e),
        _ => Check {
            name: "worker_determinism".into(),
            pass: false,
            margin: f64::INFINITY,
            detail: "could not build scoped thread pools".into(),
        },
    }
}

pub fn run_validate(cfg: &ExperimentConfig) -> ValidationReport {
    let mut checks = vec![
        tw_charge_conservation(cfg),
        tw_initial_moments(cfg),
        tw_ordering_correction(cfg),
        pp_initial_identities(cfg),
        engine_cross_agreement(cfg),
    ];
    let (cr, cal) = evaluated_point_checks(cfg);
    checks.push(cr);
    checks.push(cal);
    checks.push(worker_determinism(cfg));
    ValidationReport { checks }
}
