//! Experiment configuration: JSON file schema, command-line overrides and
//! per-experiment defaults. Every run materializes the fully resolved
//! configuration so output files are self-describing.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use squeezelab_core::model::MAX_SQUEEZE_R;
use squeezelab_core::Engine;

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Default sweep sizes; chosen so a full figure reproduces in minutes on a
/// laptop while keeping statistical errors below the plotted structure.
pub const DEFAULT_N_ATOMS: f64 = 1.0e4;
pub const DEFAULT_N_TRAJECTORIES: usize = 50_000;
pub const DEFAULT_MASTER_SEED: u64 = 7;

/// Squeezing grids per figure. The fixed-r sets are representative values
/// spanning both sides of the critical squeezing; they are recorded in the
/// output metadata of every run.
pub const FIG3_R_VALUES: [f64; 4] = [1.0, 2.649, 3.5, 4.5];
pub const FIG4_R_VALUES: [f64; 3] = [1.5, 2.65, 4.0];
pub const FIG5_R: f64 = 6.31;
pub const FIG6_R_RANGE: (f64, f64) = (1.0, 9.0);
pub const FIG6_R_POINTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Fig3BsSweep,
    Fig4TmmSweep,
    Fig5QcrbCompare,
    Fig6MinVsR,
    SinglePoint,
    Validate,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Fig3BsSweep,
        Experiment::Fig4TmmSweep,
        Experiment::Fig5QcrbCompare,
        Experiment::Fig6MinVsR,
        Experiment::SinglePoint,
        Experiment::Validate,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Fig3BsSweep => "fig3_bs_sweep",
            Experiment::Fig4TmmSweep => "fig4_tmm_sweep",
            Experiment::Fig5QcrbCompare => "fig5_qcrb_compare",
            Experiment::Fig6MinVsR => "fig6_min_vs_r",
            Experiment::SinglePoint => "single_point",
            Experiment::Validate => "validate",
        }
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .iter()
            .find(|e| e.as_str() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<_> = Experiment::ALL.iter().map(|e| e.as_str()).collect();
                HarnessError::Config(format!(
                    "unknown experiment '{s}' (expected one of: {})",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineChoice {
    Tw,
    Pp,
    Both,
}

impl EngineChoice {
    pub fn engines(&self) -> Vec<Engine> {
        match self {
            EngineChoice::Tw => vec![Engine::Tw],
            EngineChoice::Pp => vec![Engine::Pp],
            EngineChoice::Both => vec![Engine::Tw, Engine::Pp],
        }
    }

    pub fn includes(&self, engine: Engine) -> bool {
        self.engines().contains(&engine)
    }
}

impl FromStr for EngineChoice {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tw" => Ok(EngineChoice::Tw),
            "pp" => Ok(EngineChoice::Pp),
            "both" => Ok(EngineChoice::Both),
            other => Err(HarnessError::Config(format!(
                "unknown engine '{other}' (expected tw, pp or both)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(HarnessError::Config(format!(
                "unknown output format '{other}' (expected csv or json)"
            ))),
        }
    }
}

/// Fully resolved run configuration. This is what lands in the output
/// metadata, so the field set doubles as the provenance record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    pub n_atoms: f64,
    pub r_values: Vec<f64>,
    /// Explicit transfer-efficiency grid. Empty means "derive per r from
    /// the measured reachable maximum", which is the default for the
    /// trajectory-driven figures.
    pub q_values: Vec<f64>,
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub engine: EngineChoice,
    pub output_path: Option<PathBuf>,
    pub output_format: OutputFormat,
    /// Record real wall times per row. Off by default so identical configs
    /// produce byte-identical output files.
    pub timings: bool,
    pub threads: Option<usize>,
}

/// On-disk configuration: everything optional, unknown keys rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: Option<u32>,
    pub experiment: Option<Experiment>,
    pub n_atoms: Option<f64>,
    pub r_values: Option<Vec<f64>>,
    pub q_values: Option<Vec<f64>>,
    pub n_trajectories: Option<usize>,
    pub master_seed: Option<u64>,
    pub engine: Option<EngineChoice>,
    pub output_path: Option<PathBuf>,
    pub output_format: Option<OutputFormat>,
    pub timings: Option<bool>,
    pub threads: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            HarnessError::Config(format!("cannot parse config {}: {e}", path.display()))
        })
    }
}

/// Command-line overrides; these win over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trajectories: Option<usize>,
    pub engine: Option<EngineChoice>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub threads: Option<usize>,
    pub timings: bool,
}

fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

fn default_r_values(experiment: Experiment) -> Vec<f64> {
    match experiment {
        Experiment::Fig3BsSweep => FIG3_R_VALUES.to_vec(),
        Experiment::Fig4TmmSweep => FIG4_R_VALUES.to_vec(),
        Experiment::Fig5QcrbCompare => vec![FIG5_R],
        Experiment::Fig6MinVsR => linear_grid(FIG6_R_RANGE.0, FIG6_R_RANGE.1, FIG6_R_POINTS),
        Experiment::SinglePoint => vec![2.0],
        Experiment::Validate => vec![],
    }
}

fn default_q_values(experiment: Experiment) -> Vec<f64> {
    match experiment {
        // closed forms cover the whole range, so sweep it densely
        Experiment::Fig3BsSweep => log_grid(1.0e-3, 1.0, 40),
        Experiment::SinglePoint => vec![0.5],
        // trajectory figures derive their grid from the reachable maximum
        _ => vec![],
    }
}

fn default_engine(experiment: Experiment) -> EngineChoice {
    match experiment {
        Experiment::Fig4TmmSweep | Experiment::Fig5QcrbCompare | Experiment::Validate => {
            EngineChoice::Both
        }
        _ => EngineChoice::Tw,
    }
}

/// Merge defaults, file values and command-line overrides into a resolved
/// configuration, then validate it.
pub fn resolve(experiment: Experiment, file: ConfigFile, cli: Overrides) -> Result<ExperimentConfig> {
    if let Some(v) = file.schema_version {
        if v != SCHEMA_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported schema_version {v} (this build speaks {SCHEMA_VERSION})"
            )));
        }
    }
    if let Some(e) = file.experiment {
        if e != experiment {
            return Err(HarnessError::Config(format!(
                "config file is for '{}' but '{}' was requested",
                e.as_str(),
                experiment.as_str()
            )));
        }
    }
    let config = ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        experiment,
        n_atoms: file.n_atoms.unwrap_or(DEFAULT_N_ATOMS),
        r_values: file.r_values.unwrap_or_else(|| default_r_values(experiment)),
        q_values: file.q_values.unwrap_or_else(|| default_q_values(experiment)),
        n_trajectories: cli
            .trajectories
            .or(file.n_trajectories)
            .unwrap_or(DEFAULT_N_TRAJECTORIES),
        master_seed: cli.seed.or(file.master_seed).unwrap_or(DEFAULT_MASTER_SEED),
        engine: cli
            .engine
            .or(file.engine)
            .unwrap_or_else(|| default_engine(experiment)),
        output_path: cli.out.or(file.output_path),
        output_format: cli.format.or(file.output_format).unwrap_or(OutputFormat::Csv),
        timings: cli.timings || file.timings.unwrap_or(false),
        threads: cli.threads.or(file.threads),
    };
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    /// Resolved defaults for an experiment with no config file and no flags.
    pub fn defaults(experiment: Experiment) -> Self {
        resolve(experiment, ConfigFile::default(), Overrides::default())
            .expect("builtin defaults validate")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if !(self.n_atoms.is_finite() && self.n_atoms > 0.0) {
            return fail(format!("n_atoms must be positive, got {}", self.n_atoms));
        }
        if self.n_trajectories == 0 {
            return fail("n_trajectories must be positive".into());
        }
        if self.threads == Some(0) {
            return fail("threads must be a positive integer".into());
        }
        for &r in &self.r_values {
            if !r.is_finite() || !(0.0..=MAX_SQUEEZE_R).contains(&r) {
                return fail(format!("squeeze parameter {r} outside [0, {MAX_SQUEEZE_R}]"));
            }
        }
        for &q in &self.q_values {
            if !q.is_finite() || !(0.0..=1.0).contains(&q) {
                return fail(format!("transfer efficiency {q} outside [0, 1]"));
            }
        }
        match self.experiment {
            Experiment::Validate => {}
            Experiment::SinglePoint => {
                if self.r_values.is_empty() || self.q_values.is_empty() {
                    return fail("single_point needs one r value and one q value".into());
                }
            }
            Experiment::Fig3BsSweep => {
                if self.r_values.is_empty() {
                    return fail("r_values must be non-empty".into());
                }
                if self.q_values.is_empty() {
                    return fail("fig3_bs_sweep needs a non-empty q grid".into());
                }
                if self.q_values.iter().any(|&q| q == 0.0) {
                    return fail("fig3_bs_sweep q grid must exclude 0 (no signal there)".into());
                }
            }
            _ => {
                if self.r_values.is_empty() {
                    return fail("r_values must be non-empty".into());
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.as_str().parse::<Experiment>().unwrap(), e);
        }
        assert!("fig7".parse::<Experiment>().is_err());
    }

    #[test]
    fn defaults_are_materialized_per_experiment() {
        let c = ExperimentConfig::defaults(Experiment::Fig3BsSweep);
        assert_eq!(c.r_values, FIG3_R_VALUES.to_vec());
        assert_eq!(c.q_values.len(), 40);
        assert_eq!(c.engine, EngineChoice::Tw);
        assert_eq!(c.master_seed, DEFAULT_MASTER_SEED);

        let c = ExperimentConfig::defaults(Experiment::Fig6MinVsR);
        assert_eq!(c.r_values.len(), FIG6_R_POINTS);
        assert_eq!(c.r_values[0], 1.0);
        assert_eq!(*c.r_values.last().unwrap(), 9.0);
        assert!(c.q_values.is_empty());

        let c = ExperimentConfig::defaults(Experiment::Fig4TmmSweep);
        assert_eq!(c.engine, EngineChoice::Both);
        assert!(!c.timings);
    }

    #[test]
    fn cli_overrides_beat_file_values() {
        let file = ConfigFile {
            master_seed: Some(11),
            n_trajectories: Some(1000),
            ..ConfigFile::default()
        };
        let cli = Overrides {
            seed: Some(99),
            ..Overrides::default()
        };
        let c = resolve(Experiment::SinglePoint, file, cli).unwrap();
        assert_eq!(c.master_seed, 99);
        assert_eq!(c.n_trajectories, 1000);
    }

    #[test]
    fn experiment_mismatch_is_a_config_error() {
        let file = ConfigFile {
            experiment: Some(Experiment::Fig3BsSweep),
            ..ConfigFile::default()
        };
        let err = resolve(Experiment::Validate, file, Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut c = ExperimentConfig::defaults(Experiment::Fig3BsSweep);
        c.q_values = vec![0.5, 1.2];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::defaults(Experiment::Fig4TmmSweep);
        c.n_atoms = -1.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::defaults(Experiment::SinglePoint);
        c.r_values.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_schema_version_is_rejected() {
        let file = ConfigFile {
            schema_version: Some(2),
            ..ConfigFile::default()
        };
        let err = resolve(Experiment::Validate, file, Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("schema_version"));
    }
}
