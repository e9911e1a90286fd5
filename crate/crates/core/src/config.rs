//! Declarative pipeline configuration.
//!
//! One struct covers every stage so a single TOML file can drive the
//! command-line tools. Each section has working defaults; an empty file
//! is a valid configuration.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fusion::FusionConfig;
use crate::latent::FeatureLayout;
use crate::lstm::TrainConfig;
use crate::normalize::NormalizeMode;
use crate::region::SelectionCvConfig;
use crate::skeleton::JointRoleMap;
use crate::synth::{SynthDescriptorSpec, SynthSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmSettings {
    pub c_reg: f64,
    pub epochs: usize,
    /// Grid searched by `select_c_reg`; empty means use `c_reg` directly.
    pub c_grid: Vec<f64>,
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for SvmSettings {
    fn default() -> Self {
        SvmSettings { c_reg: 1.0, epochs: 100, c_grid: Vec::new(), cv_folds: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizeSettings {
    pub roles: JointRoleMap,
    pub mode: NormalizeMode,
    /// Sequences are padded or truncated to this many frames.
    pub target_frames: usize,
}

impl Default for NormalizeSettings {
    fn default() -> Self {
        NormalizeSettings {
            roles: JointRoleMap::kinect20(),
            mode: NormalizeMode::PerFrame,
            target_frames: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub synth: SynthSpec,
    pub descriptors: SynthDescriptorSpec,
    pub normalize: NormalizeSettings,
    pub train: TrainConfig,
    pub layout: FeatureLayout,
    pub svm: SvmSettings,
    pub selection: SelectionCvConfig,
    pub fusion: FusionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            synth: SynthSpec::default(),
            descriptors: SynthDescriptorSpec::default(),
            normalize: NormalizeSettings::default(),
            train: TrainConfig::default(),
            layout: FeatureLayout::FlattenTime,
            svm: SvmSettings::default(),
            selection: SelectionCvConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.normalize.roles.validate()?;
        self.train.validate()?;
        Ok(())
    }
}
