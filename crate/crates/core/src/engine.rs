//! Uniform entry point over the two trajectory engines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::moments::EnsembleMoments;
use crate::tw::IntegratorConfig;
use crate::{pp, tw};

/// Which phase-space method integrates the ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Truncated Wigner: symmetric ordering, deterministic trajectories.
    Tw,
    /// Positive-P: normal ordering, doubled phase space, multiplicative noise.
    Pp,
}

impl Engine {
    pub fn default_config(&self) -> IntegratorConfig {
        match self {
            Engine::Tw => IntegratorConfig::tw_default(),
            Engine::Pp => IntegratorConfig::pp_default(),
        }
    }

    pub fn run(&self, params: &ModelParams, tau: f64) -> Result<EnsembleMoments> {
        self.run_with(params, tau, &self.default_config())
    }

    pub fn run_with(
        &self,
        params: &ModelParams,
        tau: f64,
        config: &IntegratorConfig,
    ) -> Result<EnsembleMoments> {
        match self {
            Engine::Tw => tw::run_tw(params, tau, config),
            Engine::Pp => pp::run_pp(params, tau, config),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Tw => "tw",
            Engine::Pp => "pp",
        })
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tw" => Ok(Engine::Tw),
            "pp" => Ok(Engine::Pp),
            other => Err(Error::Config(format!(
                "unknown engine '{other}' (expected 'tw' or 'pp')"
            ))),
        }
    }
}
