//! Run configuration: one JSON document with `dataset`, `model`, `train`,
//! `eval` and `io` sections. Unknown keys are rejected and every missing
//! field takes its default, so the resolved document written next to each
//! run's outputs is complete.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::DatasetSpec;
use crate::error::{invalid, Result};
use crate::ingest::{BlurConfig, HsvMask};
use crate::mbonet::TrainConfig;
use crate::metanet::{MetaConfig, MetaTrainConfig};
use crate::metrics::{FrameRange, DEFAULT_EPSILON};
use crate::store;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub io: IoSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Declared kernel size; defaults to the dataset's kernel size.
    #[serde(default)]
    pub kernel_size: Option<usize>,
    #[serde(default = "default_steepness")]
    pub steepness: f64,
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Encoder convolution widths (meta model only).
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
    #[serde(default = "default_conv_size")]
    pub conv_size: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kernel_size: None,
            steepness: default_steepness(),
            layers: default_layers(),
            channels: default_channels(),
            conv_size: default_conv_size(),
            stride: default_stride(),
        }
    }
}

fn default_steepness() -> f64 {
    100.0
}

fn default_layers() -> usize {
    3
}

fn default_channels() -> Vec<usize> {
    vec![16, 32, 32]
}

fn default_conv_size() -> usize {
    3
}

fn default_stride() -> usize {
    2
}

/// Optimizer settings. `kernel_lr` and `threshold_lr` drive the single
/// dynamics model; `lr`, `batch_size` and the head scales drive the meta
/// model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_kernel_lr")]
    pub kernel_lr: f64,
    #[serde(default = "default_threshold_lr")]
    pub threshold_lr: f64,
    #[serde(default = "default_meta_lr")]
    pub lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_kernel_head_lr_scale")]
    pub kernel_head_lr_scale: f64,
    #[serde(default = "default_threshold_head_lr_scale")]
    pub threshold_head_lr_scale: f64,
    /// Random flips and transposes of meta training videos.
    #[serde(default = "default_augment")]
    pub augment: bool,
    /// Train on only the first `n` training videos.
    #[serde(default)]
    pub max_videos: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            kernel_lr: default_kernel_lr(),
            threshold_lr: default_threshold_lr(),
            lr: default_meta_lr(),
            batch_size: default_batch_size(),
            kernel_head_lr_scale: default_kernel_head_lr_scale(),
            threshold_head_lr_scale: default_threshold_head_lr_scale(),
            augment: default_augment(),
            max_videos: None,
            seed: 0,
        }
    }
}

fn default_epochs() -> usize {
    500
}

fn default_augment() -> bool {
    true
}

fn default_kernel_lr() -> f64 {
    TrainConfig::new(1, 1).kernel_lr
}

fn default_threshold_lr() -> f64 {
    TrainConfig::new(1, 1).threshold_lr
}

fn default_meta_lr() -> f64 {
    MetaTrainConfig::new(1).lr
}

fn default_batch_size() -> usize {
    MetaTrainConfig::new(1).batch_size
}

fn default_kernel_head_lr_scale() -> f64 {
    MetaTrainConfig::new(1).kernel_head_lr_scale
}

fn default_threshold_head_lr_scale() -> f64 {
    MetaTrainConfig::new(1).threshold_head_lr_scale
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Scored frames; defaults to frame 2 through the last frame.
    #[serde(default)]
    pub frames: Option<FrameRange>,
    /// Frames predicted after the first; defaults to the video length − 1.
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { frames: None, n_steps: None, epsilon: default_epsilon() }
    }
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    #[serde(default = "default_fire_blur")]
    pub fire_blur: Option<BlurConfig>,
    #[serde(default = "HsvMask::fire")]
    pub fire_mask: HsvMask,
    #[serde(default = "HsvMask::red_outline")]
    pub ice_mask: HsvMask,
}

impl Default for IoSection {
    fn default() -> Self {
        Self { fire_blur: default_fire_blur(), fire_mask: HsvMask::fire(), ice_mask: HsvMask::red_outline() }
    }
}

fn default_fire_blur() -> Option<BlurConfig> {
    Some(BlurConfig::default())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let config: RunConfig = store::read_json(path)?;
        config.validate()?;
        Ok(config)
    }

    /// `--seed` replaces both the dataset and the training seed.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            if let Some(d) = self.dataset.as_mut() {
                d.seed = s;
            }
            self.train.seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = &self.dataset {
            d.validate()?;
        }
        if self.eval.epsilon <= 0.0 {
            return Err(invalid("eval.epsilon must be positive"));
        }
        self.io.fire_mask.validate()?;
        self.io.ice_mask.validate()?;
        if let Some(k) = self.model.kernel_size {
            self.meta_config(k).validate()?;
        }
        Ok(())
    }

    pub fn mbo_config(&self, kernel_size: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            kernel_lr: self.train.kernel_lr,
            threshold_lr: self.train.threshold_lr,
            steepness: self.model.steepness,
            layers: self.model.layers,
            kernel_size,
            seed: self.train.seed,
        }
    }

    pub fn meta_config(&self, kernel_size: usize) -> MetaConfig {
        MetaConfig {
            kernel_size,
            channels: self.model.channels.clone(),
            conv_size: self.model.conv_size,
            stride: self.model.stride,
            steepness: self.model.steepness,
            layers: self.model.layers,
        }
    }

    pub fn meta_train_config(&self) -> MetaTrainConfig {
        MetaTrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            kernel_head_lr_scale: self.train.kernel_head_lr_scale,
            threshold_head_lr_scale: self.train.threshold_head_lr_scale,
            augment: self.train.augment,
            seed: self.train.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_resolves_to_defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"epoch": 3}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"eval": {"frames": "9-2"}}"#).is_err());
    }

    #[test]
    fn seed_override_reaches_both_sections() {
        let c: RunConfig = serde_json::from_str(
            r#"{"dataset": {"kernel": {"family": "delta", "size": 3}, "videos_per_combo": 2, "seed": 1}}"#,
        )
        .unwrap();
        let c = c.with_seed(Some(9));
        assert_eq!(c.dataset.unwrap().seed, 9);
        assert_eq!(c.train.seed, 9);
    }

    #[test]
    fn shipped_recipes_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../recipes");
        let mut n = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                let c = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                let spec = c.dataset.expect("recipes carry a dataset");
                assert!(spec.total_videos() > spec.n_test(), "{}", path.display());
                n += 1;
            }
        }
        assert!(n >= 10);
    }
}
