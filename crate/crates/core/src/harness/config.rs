//! Experiment configuration: a TOML document with nested sections for the
//! benchmark, base training, and adaptation. Unknown keys are hard errors so
//! typos cannot silently corrupt a sweep.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::adapt::AdaptConfig;
use crate::data::BenchmarkParams;
use crate::error::{Error, Result};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseMethod {
    Erm,
    Irm,
    GroupDro,
}

impl BaseMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaseMethod::Erm => "erm",
            BaseMethod::Irm => "irm",
            BaseMethod::GroupDro => "groupdro",
        }
    }
}

impl std::str::FromStr for BaseMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(BaseMethod::Erm),
            "irm" => Ok(BaseMethod::Irm),
            "groupdro" => Ok(BaseMethod::GroupDro),
            other => Err(Error::Config(format!(
                "unknown base method {other:?} (expected erm, irm, or groupdro)"
            ))),
        }
    }
}

/// Top-level experiment settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub n_trials: usize,
    pub master_seed: u64,
    pub base_method: BaseMethod,
    pub output_dir: PathBuf,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            n_trials: 5,
            master_seed: 0,
            base_method: BaseMethod::Irm,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// The whole config document. Every section falls back to defaults when
/// absent, so an empty file is a valid five-trial IRM experiment.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSettings,
    pub benchmark: BenchmarkParams,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.experiment.n_trials == 0 {
            return Err(Error::Config("n_trials must be >= 1".into()));
        }
        self.benchmark.validate()?;
        self.train.validate()?;
        self.adapt.validate()
    }

    /// Seed for one trial: the master seed plus the trial index.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.experiment.master_seed.wrapping_add(trial as u64)
    }
}

/// Parses and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Stable hash of a config's canonical serialization, for provenance stamps.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let canonical = toml::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
