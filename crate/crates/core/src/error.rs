use thiserror::Error;

/// Errors shared across the analytic and Monte Carlo layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error(
        "depleted regime: mean atom-number difference is non-positive \
         (r = {r}, q = {q}, n_atoms = {n_atoms}); the beamsplitter closed forms do not apply"
    )]
    DepletedRegime { r: f64, q: f64, n_atoms: f64 },

    #[error("signal slope vanishes; phase sensitivity is undefined at this operating point")]
    ZeroSlope,

    #[error("reflection coefficient {0} outside [0, 1]")]
    InvalidQ(f64),

    #[error("series undefined at tau = 0 (sensitivity diverges as 1/tau)")]
    SeriesUndefined,

    #[error("ensemble too small: {0} trajectories (need at least 2)")]
    InsufficientEnsemble(usize),

    #[error("{0} is not finite; recycled-signal variance cannot be formed")]
    MissingCovariance(&'static str),

    #[error("negative variance estimate {value} for {what}; ensemble is unusable")]
    NegativeVariance { what: &'static str, value: f64 },

    #[error("non-positive Fisher information {0}; cannot form a Cramer-Rao bound")]
    NonPositiveFisher(f64),

    #[error(
        "{n_diverged} of {n_launched} trajectories hit the divergence guard (> {max_frac:.1}%); \
         ensemble rejected"
    )]
    UnusableEnsemble {
        n_diverged: usize,
        n_launched: usize,
        max_frac: f64,
    },

    #[error("target efficiency {q_target} unreachable on the first rising branch (max {q_max:.4})")]
    UnreachableQ { q_target: f64, q_max: f64 },

    #[error("calibration failed: |q_achieved - q_target| = {miss:.2e} exceeds tolerance {tol:.2e}")]
    CalibrationMiss { miss: f64, tol: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
