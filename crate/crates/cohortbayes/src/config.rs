//! JSON run configurations, one file per run.

use std::path::{Path, PathBuf};

use cohortbayes_core::baselines::WeightScheme;
use cohortbayes_core::samplers::ChainConfig;
use cohortbayes_core::simulation::{AnalogueConfig, Estimator, SimConfig, StudyChainSettings};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Reads a config and resolves relative paths against its directory.
pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn resolve(config_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    config_path.parent().map(|d| d.join(p)).unwrap_or_else(|| p.to_path_buf())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum SimulateConfig {
    Weibull(SimConfig),
    Analogue(AnalogueConfig),
}

impl SimulateConfig {
    pub fn seed_mut(&mut self) -> &mut u64 {
        match self {
            SimulateConfig::Weibull(c) => &mut c.seed,
            SimulateConfig::Analogue(c) => &mut c.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Bootstrap,
    Conjugate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub data: PathBuf,
    pub model: ModelKind,
    pub chain: ChainConfig,
    /// Report the split-chain R-hat next to the classic one.
    #[serde(default)]
    pub split_rhat: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default = "all_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub chain: StudyChainSettings,
}

fn all_estimators() -> Vec<Estimator> {
    Estimator::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinesConfig {
    pub data: PathBuf,
    /// Defaults to all four schemes; `full` is skipped when some `z` is
    /// missing.
    #[serde(default)]
    pub schemes: Option<Vec<WeightScheme>>,
    /// Subcohort sampling probability for `ipw` when `schemes` is omitted.
    #[serde(default)]
    pub sampling_prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlrConfig {
    pub input: PathBuf,
    /// Columns holding the modeled parts. A column named `_other`, when
    /// present, is the remainder; otherwise the remainder is the total minus
    /// their sum.
    pub components: Vec<String>,
    /// Parts are percentages rather than fractions.
    #[serde(default)]
    pub percent: bool,
    /// Replacement for zero parts, as a fraction.
    #[serde(default = "default_detection_half")]
    pub detection_half: f64,
    /// 0/1 column marking the rows whose standard deviations scale the
    /// coordinates; no scaling when absent.
    #[serde(default)]
    pub reference_column: Option<String>,
    /// Standard-deviation sidecar read by `--inverse`.
    #[serde(default)]
    pub sd_file: Option<PathBuf>,
}

fn default_detection_half() -> f64 {
    5e-5
}

/// Applies `--seed` when given.
pub fn override_seed(seed: &mut u64, flag: Option<u64>) {
    if let Some(s) = flag {
        *seed = s;
    }
}
