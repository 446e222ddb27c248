//! Experiment harness for the squeezelab core: named sweep recipes, a
//! versioned JSON configuration layer, CSV/JSON table output, and a runtime
//! self-check suite. The binary in `main.rs` is a thin argument shim over
//! this library so integration tests can drive everything in-process.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod validate;

pub use config::{ConfigFile, EngineChoice, Experiment, ExperimentConfig, OutputFormat, Overrides};
pub use error::{HarnessError, Result};
pub use experiments::{run_experiment, RunOutput};
pub use output::{Meta, SweepDocument, SweepRow, CSV_HEADER};
pub use validate::{run_validate, Check, ValidationReport};
