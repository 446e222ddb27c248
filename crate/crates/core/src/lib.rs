//! Core library for squeezelab: analytic formulas and phase-space Monte
//! Carlo for a squeezed-light-enhanced atom interferometer with
//! information recycling.
//!
//! The layers, bottom to top:
//! - [`model`]: shared parameters and elementary closed forms
//! - [`analytic_bs`]: undepleted beamsplitter-limit formulas
//! - [`analytic_smallq`]: small transfer-fraction expansions and the QFI
//! - [`tw`], [`pp`]: truncated-Wigner and positive-P trajectory engines
//! - [`moments`], [`stats`]: ensemble reduction with batch-means errors
//! - [`metrology`]: operating-point signal, sensitivity, QFI/QCRB
//! - [`optimize`]: tau calibration and minima over (r, q)

pub mod analytic_bs;
pub mod analytic_smallq;
pub mod engine;
pub mod error;
pub mod metrology;
pub mod model;
pub mod moments;
pub mod optimize;
pub mod pp;
pub mod rng;
pub mod stats;
pub mod tw;

pub use engine::Engine;
pub use error::{Error, Result};
pub use metrology::{Method, SensitivityResult, SignalMoments};
pub use model::{ModelParams, QstPoint};
pub use moments::{EnsembleMoments, MomentSet, QstEstimate};
pub use optimize::{CalibrationResult, EvaluatedPoint, Objective, OptimumPoint, TransferScan};
pub use pp::{PpGuardReport, PpTrajectory};
pub use stats::MeanSe;
pub use tw::{IntegratorConfig, Scheme, TwTrajectory};
