//! Localization stage: train and run an object detector behind a
//! backend-neutral contract.
//!
//! [`detect`] returns scored, class-labeled boxes in original-image
//! coordinates, confidence-filtered and deduplicated with greedy NMS.
//! Checkpoints are a directory holding a JSON manifest plus a raw weights
//! blob, and reload bit-compatibly.

mod backend;
mod tiny;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::categories::{CategoryMap, NUM_CATEGORIES};
use crate::config::{config_hash, DETECTOR_INPUT_SIDE, FORMAT_VERSION};
use crate::dataset::{preprocess_for_detector, AnnotatedImage};
use crate::error::{Error, Result};
use crate::fusion::ClassScores;
use crate::geometry::{iou, BoundingBox};

pub use backend::{create_detector_backend, DetectorBackend, RawDetection, DETECTOR_BACKENDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub input_side: u32,
    pub num_classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub backbone_id: String,
    pub score_threshold: f64,
    pub nms_iou_threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            input_side: DETECTOR_INPUT_SIDE,
            num_classes: NUM_CATEGORIES,
            epochs: 20,
            batch_size: 4,
            learning_rate: 2e-4,
            backbone_id: "tiny-ref".to_string(),
            score_threshold: 0.3,
            nms_iou_threshold: 0.5,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("score_threshold", self.score_threshold),
            ("nms_iou_threshold", self.nms_iou_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.num_classes != NUM_CATEGORIES {
            return Err(Error::Config(format!(
                "num_classes {} unsupported; this pipeline is fixed at {NUM_CATEGORIES}",
                self.num_classes
            )));
        }
        if self.input_side < 32 {
            return Err(Error::Config(format!(
                "input_side {} too small",
                self.input_side
            )));
        }
        Ok(())
    }
}

/// A confidence-scored, class-labeled box in original-image coordinates.
/// `confidence` is always the maximum component of `scores`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub scores: ClassScores,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, scores: ClassScores) -> Result<Self> {
        bbox.validate()?;
        scores.validate()?;
        let (_, confidence) = scores.argmax();
        Ok(Self {
            bbox,
            scores,
            confidence,
        })
    }
}

/// Detector-level predictions for one image, as persisted by the predict
/// command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<EpochStats>,
    /// False when the backend could not guarantee bit-reproducible runs.
    pub deterministic: bool,
    pub seed: u64,
}

/// A trained detector: opaque backend state plus config, category map, and
/// the training log.
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub categories: CategoryMap,
    pub training_log: TrainingLog,
    backend: Box<dyn DetectorBackend>,
}

impl DetectorModel {
    pub fn backbone_id(&self) -> &str {
        self.backend.id()
    }
}

/// Train a detector on annotated images. `seed` controls initialization
/// and batch order; deterministic backends reproduce the loss log exactly
/// for a fixed seed.
pub fn train_detector(
    train: &[AnnotatedImage],
    val: &[AnnotatedImage],
    config: &DetectorConfig,
    seed: u64,
) -> Result<DetectorModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("detector training set is empty".into()));
    }
    let mut backend = create_detector_backend(&config.backbone_id)?;
    let entries = backend.train(train, val, config, seed)?;
    let training_log = TrainingLog {
        entries,
        deterministic: backend.deterministic(),
        seed,
    };
    Ok(DetectorModel {
        config: config.clone(),
        categories: CategoryMap::fixed(),
        training_log,
        backend,
    })
}

/// Run the detector on one image. Output boxes are in original-image
/// coordinates, sorted by confidence descending, confidence-filtered at
/// `score_threshold`, and deduplicated with NMS at `nms_iou_threshold`.
/// An empty list is a legal output and marks a mis-detection candidate.
pub fn detect(model: &DetectorModel, img: &AnnotatedImage) -> Result<Vec<Detection>> {
    let input = preprocess_for_detector(img, model.config.input_side)?;
    let (w, h) = (img.width() as f64, img.height() as f64);
    let mut detections = Vec::new();
    for raw in model.backend.infer(&input.image) {
        let in_original = input.image.box_to_original(&raw.bbox);
        let Some(bbox) = in_original.clamped(w, h) else {
            continue;
        };
        let det = Detection::new(bbox, raw.scores)?;
        if det.confidence >= model.config.score_threshold {
            detections.push(det);
        }
    }
    detections.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(nms(&detections, model.config.nms_iou_threshold))
}

/// Greedy non-maximum suppression. `candidates` must be sorted by
/// confidence descending; the highest-confidence box is kept and any
/// remaining box with IOU strictly above `iou_threshold` against a kept
/// box is dropped.
pub fn nms(candidates: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    debug_assert!(candidates.windows(2).all(|w| w[0].confidence >= w[1].confidence));
    let mut kept: Vec<Detection> = Vec::new();
    for cand in candidates {
        if kept.iter().all(|k| iou(&k.bbox, &cand.bbox) <= iou_threshold) {
            kept.push(cand.clone());
        }
    }
    kept
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format_version: u32,
    backbone_id: String,
    config: DetectorConfig,
    /// Hash of (config, seed): the inputs that produced these weights.
    config_hash: String,
    categories: CategoryMap,
    training_log: TrainingLog,
    weights_file: String,
    weights_sha256: String,
}

/// Persist a model as `<dir>/manifest.json` + `<dir>/weights.bin`.
pub fn save_checkpoint(model: &DetectorModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let weights = model.backend.export_weights();
    let digest = Sha256::digest(&weights);
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        backbone_id: model.backend.id().to_string(),
        config: model.config.clone(),
        config_hash: config_hash(&(&model.config, model.training_log.seed)),
        categories: model.categories.clone(),
        training_log: model.training_log.clone(),
        weights_file: "weights.bin".to_string(),
        weights_sha256: format!("{digest:x}"),
    };
    let weights_path = dir.join(&manifest.weights_file);
    std::fs::write(&weights_path, &weights).map_err(|e| Error::io(&weights_path, e))?;
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::Schema(format!("manifest serialization failed: {e}")))?;
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))
}

/// Reload a checkpoint. The restored model produces bit-identical
/// detections to the one that was saved.
pub fn load_checkpoint(dir: &Path) -> Result<DetectorModel> {
    let manifest_path = dir.join("manifest.json");
    let raw = std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&raw).map_err(|e| Error::json(&manifest_path, e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "checkpoint format version {} unsupported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    manifest.categories.validate()?;
    let weights_path = dir.join(&manifest.weights_file);
    let weights = std::fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    let digest = Sha256::digest(&weights);
    if format!("{digest:x}") != manifest.weights_sha256 {
        return Err(Error::Schema(format!(
            "weights blob {} does not match manifest checksum",
            weights_path.display()
        )));
    }
    let mut backend = create_detector_backend(&manifest.backbone_id)?;
    backend.import_weights(&weights)?;
    Ok(DetectorModel {
        config: manifest.config,
        categories: manifest.categories,
        training_log: manifest.training_log,
        backend,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::categories::CategoryId;

    fn det(xmin: f64, ymin: f64, xmax: f64, ymax: f64, conf_class: usize, conf: f64) -> Detection {
        // Build a scores vector whose max is `conf` at `conf_class`, rest
        // spread uniformly.
        let mut values = [(1.0 - conf) / (NUM_CATEGORIES - 1) as f64; NUM_CATEGORIES];
        values[conf_class] = conf;
        Detection::new(
            BoundingBox::new(xmin, ymin, xmax, ymax).unwrap(),
            ClassScores::new(values).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::default().validate().is_ok());
        assert!(DetectorConfig {
            epochs: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DetectorConfig {
            score_threshold: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DetectorConfig {
            learning_rate: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn train_rejects_empty_dataset() {
        assert!(matches!(
            train_detector(&[], &[], &DetectorConfig::default(), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn nms_single_candidate_unchanged() {
        let a = det(0.0, 0.0, 10.0, 10.0, 0, 0.9);
        let kept = nms(std::slice::from_ref(&a), 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].bbox, a.bbox);
    }

    #[test]
    fn nms_keeps_disjoint_boxes() {
        let a = det(0.0, 0.0, 10.0, 10.0, 0, 0.9);
        let b = det(50.0, 50.0, 60.0, 60.0, 1, 0.5);
        assert_eq!(nms(&[a, b], 0.0).len(), 2);
    }

    #[test]
    fn nms_suppresses_duplicates() {
        // IOU of these two is 0.9-ish; only the stronger survives.
        let a = det(0.0, 0.0, 100.0, 100.0, 0, 0.9);
        let b = det(0.0, 0.0, 100.0, 95.0, 0, 0.8);
        assert!(iou(&a.bbox, &b.bbox) > 0.9);
        let kept = nms(&[a, b], 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.9);
    }

    #[test]
    fn nms_greedy_three_box_fixture() {
        // Pairwise IOUs: (a,b) ~ 0.8, (a,c) and (b,c) ~ 0.1; a > b > c in
        // confidence, threshold 0.5 -> {a, c}.
        let a = det(0.0, 0.0, 100.0, 100.0, 0, 0.9);
        let b = det(0.0, 0.0, 100.0, 89.0, 0, 0.8);
        let c = det(82.0, 82.0, 190.0, 190.0, 0, 0.7);
        assert!(iou(&a.bbox, &b.bbox) > 0.75);
        assert!(iou(&a.bbox, &c.bbox) < 0.15);
        assert!(iou(&b.bbox, &c.bbox) < 0.15);
        let kept = nms(&[a.clone(), b, c.clone()], 0.5);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].bbox, a.bbox);
        assert_eq!(kept[1].bbox, c.bbox);
    }

    #[test]
    fn nms_is_idempotent() {
        let dets = vec![
            det(0.0, 0.0, 100.0, 100.0, 0, 0.9),
            det(5.0, 5.0, 105.0, 105.0, 1, 0.8),
            det(300.0, 300.0, 400.0, 400.0, 2, 0.7),
            det(301.0, 301.0, 401.0, 401.0, 3, 0.6),
        ];
        let once = nms(&dets, 0.5);
        let twice = nms(&once, 0.5);
        assert_eq!(once.len(), twice.len());
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(a.bbox, b.bbox);
        }
    }

    #[test]
    fn detection_enforces_invariants() {
        let mut values = [0.0; NUM_CATEGORIES];
        values[3] = 1.0;
        let d = Detection::new(
            BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            ClassScores::new(values).unwrap(),
        )
        .unwrap();
        assert_eq!(d.confidence, 1.0);
        let _ = CategoryId::new(3).unwrap();
    }
}
