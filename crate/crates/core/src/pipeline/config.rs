//! TOML run configuration. Every section rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::discriminator::{DiscConfig, MIN_INPUT_SIDE};
use crate::error::{CoreError, Result};
use crate::generator::GenConfig;
use crate::losses::LossWeights;
use crate::parsing::FpnConfig;

/// Where PSFR training takes its parsing maps from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    #[default]
    GroundTruth,
    Fpn,
}

/// Perceptual network used by the style loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    #[default]
    Tiny,
    Vgg19,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1_psfr: f64,
    pub adam_beta2: f64,
    pub adam_beta1_fpn: f64,
    pub lr_fpn: f64,
    pub batch_psfr: usize,
    pub batch_fpn: usize,
    pub weights: LossWeights,
    /// Side length images are trained at after degradation at 512.
    pub resolution: usize,
    pub seed: u64,
    pub max_steps: u64,
    /// Save a checkpoint every this many steps; 0 saves only at the end.
    pub checkpoint_every: u64,
    pub label_source: LabelSource,
    pub extractor: ExtractorKind,
    /// Named-tensor file with extractor weights (the checkpoint tensor format).
    pub extractor_weights: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_g: 1e-4,
            lr_d: 4e-4,
            adam_beta1_psfr: 0.5,
            adam_beta2: 0.999,
            adam_beta1_fpn: 0.9,
            lr_fpn: 2e-4,
            batch_psfr: 4,
            batch_fpn: 8,
            weights: LossWeights::default(),
            resolution: 512,
            seed: 0,
            max_steps: 1000,
            checkpoint_every: 0,
            label_source: LabelSource::GroundTruth,
            extractor: ExtractorKind::Vgg19,
            extractor_weights: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub fpn: FpnConfig,
    pub generator: GenConfig,
    pub discriminator: DiscConfig,
}

impl PipelineConfig {
    /// 64² configuration sized for CPU experiments.
    pub fn toy() -> Self {
        PipelineConfig {
            train: TrainConfig { resolution: 64, extractor: ExtractorKind::Tiny, ..TrainConfig::default() },
            fpn: FpnConfig::toy(),
            generator: GenConfig::toy(),
            discriminator: DiscConfig::toy(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        for (name, v) in [("lr_g", t.lr_g), ("lr_d", t.lr_d), ("lr_fpn", t.lr_fpn)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CoreError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("adam_beta1_psfr", t.adam_beta1_psfr), ("adam_beta1_fpn", t.adam_beta1_fpn), ("adam_beta2", t.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(CoreError::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if t.batch_psfr == 0 || t.batch_fpn == 0 {
            return Err(CoreError::Config("batch sizes must be positive".into()));
        }
        t.weights.validate()?;
        self.fpn.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        if !t.resolution.is_power_of_two() || t.resolution < self.generator.base_resolution {
            return Err(CoreError::Config(format!(
                "resolution {} must be a power of two no smaller than the generator base {}",
                t.resolution, self.generator.base_resolution
            )));
        }
        if self.generator.output_size() != t.resolution {
            return Err(CoreError::Config(format!(
                "generator produces {}² but training runs at {}²",
                self.generator.output_size(),
                t.resolution
            )));
        }
        if self.fpn.in_resolution != t.resolution {
            return Err(CoreError::Config(format!(
                "parsing network expects {}² but training runs at {}²",
                self.fpn.in_resolution, t.resolution
            )));
        }
        if t.resolution < MIN_INPUT_SIDE {
            return Err(CoreError::Config(format!(
                "resolution {} is below the discriminator minimum {MIN_INPUT_SIDE}",
                t.resolution
            )));
        }
        if t.resolution > crate::imaging::PIPELINE_SIZE {
            return Err(CoreError::Config("resolution cannot exceed the 512 degradation size".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        for cfg in [PipelineConfig::default(), PipelineConfig::toy()] {
            cfg.validate().unwrap();
            assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("[train]\nlearning_rate = 0.1\n").is_err());
        assert!(PipelineConfig::from_toml("[bogus]\n").is_err());
        let cfg = PipelineConfig::from_toml("[train]\nseed = 7\n").unwrap();
        assert_eq!(cfg.train.seed, 7);
    }

    #[test]
    fn resolution_must_match_generator() {
        let mut cfg = PipelineConfig::toy();
        cfg.train.resolution = 128;
        assert!(cfg.validate().is_err());
    }
}
