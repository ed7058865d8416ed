//! Pipeline constants and the run configuration.
//!
//! Every numeric constant the pipeline depends on lives here or in a
//! serializable config struct, so a run is fully described by one JSON
//! config file plus a seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{ExtractorConfig, SvmConfig};
use crate::dataset::SplitSpec;
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};

/// Format version stamped into every artifact this pipeline writes.
pub const FORMAT_VERSION: u32 = 1;

/// Detector stage input side in pixels.
pub const DETECTOR_INPUT_SIDE: u32 = 512;

/// Crop classifier input side in pixels.
pub const CLASSIFIER_INPUT_SIDE: u32 = 600;

/// Per-channel RGB mean used for input normalization (ImageNet statistics).
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];

/// Per-channel RGB standard deviation used for input normalization.
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Hex-encoded SHA-256 of a value's canonical JSON form. Artifacts carry
/// this so outputs can be traced back to the exact config that produced
/// them.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serialization cannot fail");
    let digest = Sha256::digest(&bytes);
    format!("{digest:x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset_root: PathBuf,
    pub annotations: PathBuf,
    pub output_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Minimum IOU for a prediction to count as matching a ground-truth box.
    pub iou_threshold: f64,
    pub histogram_bins: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            histogram_bins: 20,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::Config(format!(
                "evaluation iou_threshold {} outside [0, 1]",
                self.iou_threshold
            )));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be at least 1".into()));
        }
        Ok(())
    }
}

/// The complete description of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub svm: SvmConfig,
    #[serde(default)]
    pub extractor: ExtractorConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    42
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = serde_json::from_slice(&raw).map_err(|e| Error::json(path, e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.detector.validate()?;
        self.svm.validate()?;
        self.evaluation.validate()?;
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunConfig {
        RunConfig {
            paths: PathsConfig {
                dataset_root: "data".into(),
                annotations: "data/annotations.json".into(),
                output_dir: "out".into(),
                checkpoint_dir: "out/checkpoints".into(),
            },
            split: SplitSpec::default(),
            detector: DetectorConfig::default(),
            svm: SvmConfig::default(),
            extractor: ExtractorConfig::default(),
            evaluation: EvaluationConfig::default(),
            seed: 42,
        }
    }

    #[test]
    fn config_round_trips_losslessly() {
        let config = sample();
        let json = serde_json::to_string(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(config, back);
        assert_eq!(config.hash(), back.hash());
    }

    #[test]
    fn hash_changes_with_config() {
        let a = sample();
        let mut b = sample();
        b.seed = 43;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn unknown_fields_rejected() {
        let json = r#"{"paths": {"dataset_root": "d", "annotations": "a",
            "output_dir": "o", "checkpoint_dir": "c"}, "bogus": 1}"#;
        assert!(serde_json::from_str::<RunConfig>(json).is_err());
    }

    #[test]
    fn bad_threshold_rejected() {
        let mut config = sample();
        config.evaluation.iou_threshold = 1.5;
        assert!(config.validate().is_err());
    }
}
