//! Run configuration: defaults, overlaid by a TOML file, overlaid by flags.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use flowmotion_core::bboxprep::ROI_SIZE;
use flowmotion_core::classifier::{NetConfig, TrainConfig};
use flowmotion_core::dataset::FilterCriteria;
use flowmotion_core::flowestim::HsConfig;
use flowmotion_core::synth::SuiteConfig;

use crate::UsageError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowStage {
    #[serde(flatten)]
    pub hs: HsConfig,
    /// Pair frame `i` with `i + interval` instead of consecutive keyframes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterStage {
    #[serde(flatten)]
    pub criteria: FilterCriteria,
    pub eval_fraction: f64,
}

impl Default for FilterStage {
    fn default() -> Self {
        Self {
            criteria: FilterCriteria::default(),
            eval_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessStage {
    /// Side of the square ROI; also the classifier input size.
    pub roi_size: usize,
}

impl Default for PreprocessStage {
    fn default() -> Self {
        Self { roi_size: ROI_SIZE }
    }
}

/// Everything a run needs. `seed`, when set, overrides the stage seeds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub synth: SuiteConfig,
    pub flow: FlowStage,
    pub filter: FilterStage,
    pub preprocess: PreprocessStage,
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError::new(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError::new(format!("invalid config {}: {e}", path.display())).into())
    }

    /// Propagates shared values into the stages that consume them.
    pub fn resolve(mut self, seed_flag: Option<u64>) -> Self {
        if seed_flag.is_some() {
            self.seed = seed_flag;
        }
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.train.seed = s;
        }
        self.net.input_size = self.preprocess.roi_size;
        self
    }

    /// Seed used for the train/eval split.
    pub fn split_seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string_pretty(self).context("serializing resolved config")
    }
}
