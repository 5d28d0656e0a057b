//! One TOML file drives the whole pipeline. Every field has a default, so
//! a minimal config names only the dataset paths; unknown keys are
//! rejected rather than silently ignored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierSpec, ClfTrainConfig};
use crate::cleaner::CleanConfig;
use crate::dataio::SplitStrategy;
use crate::error::{CoreResult, PipelineError};
use crate::fusion::{FusionSpec, FusionTrainConfig};
use crate::preprocess::{GrahamOptions, DEFAULT_CROP_THRESHOLD};
use crate::segnet::{SegNetworkSpec, SegTrainConfig};
use crate::types::SourceDataset;

/// Environment variable that overrides `cache_root`.
pub const CACHE_ROOT_ENV: &str = "FUNDUS_CACHE_DIR";

/// Where the input data lives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Vessel dataset root (`<root>/images`, `<root>/masks`).
    pub vessel_root: Option<PathBuf>,
    /// Which vessel layout to expect.
    pub vessel_dataset: SourceDataset,
    /// STARE ground-truth labeling ("ah" or "vk"); other datasets ignore it.
    pub stare_annotator: Option<String>,
    /// Directory of graded fundus images.
    pub grading_root: Option<PathBuf>,
    /// CSV of `id,grade` rows for the grading images.
    pub grading_labels: Option<PathBuf>,
    /// Train/val/test strategy for the grading set.
    pub split: SplitStrategy,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            vessel_root: None,
            vessel_dataset: SourceDataset::External,
            stare_annotator: None,
            grading_root: None,
            grading_labels: None,
            split: SplitStrategy::Random {
                test_fraction: 0.15,
                val_fraction: 0.15,
            },
        }
    }
}

/// Shared image preparation ahead of the classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Auto-crop dark borders before enhancement.
    pub crop_enabled: bool,
    /// Intensity threshold for the crop.
    pub crop_threshold: u8,
    /// Apply the channel enhancement.
    pub graham_enabled: bool,
    pub graham: GrahamOptions,
    /// Training patches sampled per vessel image.
    pub patches_per_image: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            crop_enabled: true,
            crop_threshold: DEFAULT_CROP_THRESHOLD,
            graham_enabled: true,
            graham: GrahamOptions::default(),
            patches_per_image: 16,
        }
    }
}

impl PreprocessConfig {
    pub fn crop_threshold_opt(&self) -> Option<u8> {
        self.crop_enabled.then_some(self.crop_threshold)
    }

    pub fn graham_opt(&self) -> Option<GrahamOptions> {
        self.graham_enabled.then(|| self.graham.clone())
    }
}

/// Inference-side knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Vessel-probability threshold for mask binarization.
    pub seg_threshold: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig { seg_threshold: 0.5 }
    }
}

/// The whole pipeline in one file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Global seed; every stage derives its own stream from it. Stage-level
    /// `seed` fields inside this file are ignored by `run`.
    pub seed: Option<u64>,
    /// Where run directories (manifest, checkpoints, logs) are written.
    pub output_root: Option<PathBuf>,
    /// Stage cache location; the FUNDUS_CACHE_DIR environment variable
    /// overrides it.
    pub cache_root: Option<PathBuf>,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub segnet: SegNetworkSpec,
    pub seg_train: SegTrainConfig,
    pub cleaner: CleanConfig,
    pub classifier: ClassifierSpec,
    pub clf_train: ClfTrainConfig,
    pub fusion: FusionSpec,
    pub fusion_train: FusionTrainConfig,
    pub predict: PredictConfig,
}

impl PipelineConfig {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(42)
    }

    pub fn output_root(&self) -> PathBuf {
        self.output_root.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }

    /// Effective cache root: environment override, then config, then
    /// `<output_root>/cache`.
    pub fn cache_root(&self) -> PathBuf {
        if let Ok(dir) = std::env::var(CACHE_ROOT_ENV) {
            if !dir.is_empty() {
                return PathBuf::from(dir);
            }
        }
        self.cache_root
            .clone()
            .unwrap_or_else(|| self.output_root().join("cache"))
    }

    /// Structural validation plus existence checks for the named paths.
    /// Catches config mistakes before any compute starts.
    pub fn validate(&self) -> CoreResult<()> {
        self.segnet.validate()?;
        self.seg_train.validate()?;
        self.cleaner.validate()?;
        self.classifier.validate()?;
        self.clf_train.validate()?;
        self.fusion.validate()?;
        self.fusion_train.validate()?;
        if !(self.predict.seg_threshold > 0.0 && self.predict.seg_threshold < 1.0) {
            return Err(PipelineError::Config(format!(
                "predict.seg_threshold must be in (0,1), got {}",
                self.predict.seg_threshold
            )));
        }
        if self.preprocess.patches_per_image == 0 {
            return Err(PipelineError::Config(
                "preprocess.patches_per_image must be >= 1".into(),
            ));
        }
        for (name, path) in [
            ("data.vessel_root", &self.data.vessel_root),
            ("data.grading_root", &self.data.grading_root),
            ("data.grading_labels", &self.data.grading_labels),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(PipelineError::Config(format!(
                        "{name} does not exist: {}",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// The effective configuration as TOML text (for manifests).
    pub fn to_toml(&self) -> CoreResult<String> {
        toml::to_string_pretty(self)
            .map_err(|e| PipelineError::Config(format!("cannot serialize config: {e}")))
    }
}

/// Parse a pipeline config from TOML text.
pub fn parse_config(text: &str) -> CoreResult<PipelineConfig> {
    let cfg: PipelineConfig = toml::from_str(text)
        .map_err(|e| PipelineError::Config(format!("invalid config: {e}")))?;
    Ok(cfg)
}

/// Load and parse a pipeline config file.
pub fn load_config(path: &Path) -> CoreResult<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    parse_config(&text)
}
