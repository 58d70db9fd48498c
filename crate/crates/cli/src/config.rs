use std::path::Path;

use agentgen::gen::{GenTrainConfig, SampleMode};
use agentgen::latent::SweepConfig;
use agentgen::repair::RepairConfig;
use agentgen::zoo::{Group, ZooBuildConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run can be configured with. Every section has defaults, so a
/// config file only needs the keys it changes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub train_zoo: ZooBuildConfig,
    pub train_gen: GenTrainConfig,
    pub sample: SampleSection,
    pub eval: EvalSection,
    pub convergence: ConvergenceSection,
    pub interpolate: SweepConfig,
    pub repair: RepairSection,
    pub efficiency: EfficiencySection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub n: usize,
    pub mode: SampleMode,
    pub label: Option<Group>,
    pub eval_episodes: usize,
    pub hist_bins: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            n: 200,
            mode: SampleMode::Posterior,
            label: None,
            eval_episodes: 100,
            hist_bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { episodes: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSection {
    pub reference_states: usize,
    pub per_group: usize,
    /// Survival window `[lo, hi]` for good networks.
    pub good: (f64, f64),
    /// Survival window `[lo, hi]` for bad networks.
    pub bad: (f64, f64),
    /// Generator draws allowed per group when sampling from models.
    pub max_draws: usize,
    pub eval_episodes: usize,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self {
            reference_states: 10_000,
            per_group: 10,
            good: (185.0, 195.0),
            bad: (25.0, 35.0),
            max_draws: 5_000,
            eval_episodes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepairSection {
    pub fractions: Vec<f64>,
    pub trials: usize,
    #[serde(flatten)]
    pub repair: RepairConfig,
}

impl Default for RepairSection {
    fn default() -> Self {
        Self {
            fractions: agentgen::repair::default_fractions(),
            trials: 1,
            repair: RepairConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfficiencySection {
    pub fractions: Vec<f64>,
}

impl Default for EfficiencySection {
    fn default() -> Self {
        Self {
            fractions: vec![1.0, 0.1, 0.01],
        }
    }
}
