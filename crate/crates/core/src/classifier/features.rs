//! Fixed deep-feature extraction for detection crops.
//!
//! An extractor is a frozen, pretrained backbone: a pure function from a
//! 600x600 normalized crop to a 2560-component feature vector, identical
//! bit-for-bit on identical inputs. The `tiny-frozen` reference backend is
//! a small seeded CNN whose pooled statistics are linearly projected up to
//! the contract width; the EfficientNet-B7 backend id is registered but
//! needs external weights.

use std::path::{Path, PathBuf};

use rand::{rngs::StdRng, Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::CLASSIFIER_INPUT_SIDE;
use crate::dataset::NormalizedImage;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::nn::{avgpool, maxpool2, relu, Conv2d};

/// Feature width of the classifier stage.
pub const FEATURE_DIM: usize = 2560;

/// A validated feature vector: exactly [`FEATURE_DIM`] finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::Contract(format!(
                "feature vector has {} components, expected {FEATURE_DIM}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "feature component {bad} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }
}

pub trait FeatureExtractor: Send + Sync {
    fn id(&self) -> &'static str;

    /// Pure function of the crop; the input side must match
    /// [`CLASSIFIER_INPUT_SIDE`].
    fn extract(&self, crop: &NormalizedImage) -> Result<FeatureVector>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub backbone_id: String,
    /// Optional on-disk feature cache keyed by (image id, box).
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            backbone_id: "tiny-frozen".to_string(),
            cache_dir: None,
        }
    }
}

/// Backbone ids accepted by [`create_feature_extractor`].
pub const EXTRACTOR_BACKENDS: &[&str] = &["tiny-frozen", "efficientnet-b7"];

pub fn create_feature_extractor(id: &str) -> Result<Box<dyn FeatureExtractor>> {
    match id {
        "tiny-frozen" => Ok(Box::new(TinyFrozenExtractor::new())),
        "efficientnet-b7" => Err(Error::Capability(
            "extractor backend \"efficientnet-b7\" is registered but unavailable: requires external pretrained weights".to_string(),
        )),
        other => Err(Error::Config(format!(
            "unknown extractor backbone {other:?}; registered: {EXTRACTOR_BACKENDS:?}"
        ))),
    }
}

/// Weights of the frozen reference backbone are a pure function of this
/// constant; they never change between runs or hosts.
const FROZEN_WEIGHTS_SEED: u64 = 0x00E6_6F0E_A7F3_0Cu64;

const POOL_FACTOR: usize = 10;
const WORK: usize = CLASSIFIER_INPUT_SIDE as usize / POOL_FACTOR; // 60
const F1: usize = 12;
const F2: usize = 24;
/// Pooled descriptor width before projection: input mean/std per channel,
/// then mean/max per channel of both conv stages.
const DESC_DIM: usize = 6 + 2 * F1 + 2 * F2;

struct TinyFrozenExtractor {
    conv1: Conv2d,
    conv2: Conv2d,
    projection: Vec<f32>, // [FEATURE_DIM][DESC_DIM]
}

impl TinyFrozenExtractor {
    fn new() -> Self {
        let mut rng = StdRng::seed_from_u64(FROZEN_WEIGHTS_SEED);
        let conv1 = Conv2d::new(3, F1, 3, &mut rng);
        let conv2 = Conv2d::new(F1, F2, 3, &mut rng);
        let limit = (3.0 / DESC_DIM as f32).sqrt();
        let projection = (0..FEATURE_DIM * DESC_DIM)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            conv1,
            conv2,
            projection,
        }
    }
}

impl FeatureExtractor for TinyFrozenExtractor {
    fn id(&self) -> &'static str {
        "tiny-frozen"
    }

    fn extract(&self, crop: &NormalizedImage) -> Result<FeatureVector> {
        if crop.side() != CLASSIFIER_INPUT_SIDE as usize {
            return Err(Error::Contract(format!(
                "extractor expects side {CLASSIFIER_INPUT_SIDE}, got {}",
                crop.side()
            )));
        }
        let side = crop.side();
        let x = avgpool(crop.pixels(), 3, side, side, POOL_FACTOR);

        let mut descriptor = Vec::with_capacity(DESC_DIM);
        for c in 0..3 {
            let plane = &x[c * WORK * WORK..(c + 1) * WORK * WORK];
            let mean = plane.iter().map(|v| *v as f64).sum::<f64>() / plane.len() as f64;
            let var = plane
                .iter()
                .map(|v| (*v as f64 - mean).powi(2))
                .sum::<f64>()
                / plane.len() as f64;
            descriptor.push(mean as f32);
            descriptor.push(var.sqrt() as f32);
        }

        let mut a1 = self.conv1.forward(&x, WORK, WORK);
        relu(&mut a1);
        let (p1, _) = maxpool2(&a1, F1, WORK, WORK);
        pooled_stats(&p1, F1, WORK / 2, &mut descriptor);

        let mut a2 = self.conv2.forward(&p1, WORK / 2, WORK / 2);
        relu(&mut a2);
        let (p2, _) = maxpool2(&a2, F2, WORK / 2, WORK / 2);
        pooled_stats(&p2, F2, WORK / 4, &mut descriptor);

        debug_assert_eq!(descriptor.len(), DESC_DIM);
        let mut features = vec![0.0f32; FEATURE_DIM];
        for (j, feat) in features.iter_mut().enumerate() {
            let row = &self.projection[j * DESC_DIM..(j + 1) * DESC_DIM];
            *feat = row.iter().zip(&descriptor).map(|(w, d)| w * d).sum();
        }
        FeatureVector::new(features)
    }
}

fn pooled_stats(plane_stack: &[f32], channels: usize, side: usize, out: &mut Vec<f32>) {
    let n = side * side;
    for c in 0..channels {
        let plane = &plane_stack[c * n..(c + 1) * n];
        let mean = plane.iter().map(|v| *v as f64).sum::<f64>() / n as f64;
        let max = plane.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        out.push(mean as f32);
        out.push(max);
    }
}

/// On-disk feature cache keyed by (extractor id, image id, box corners).
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    fn path_for(&self, extractor_id: &str, image_id: &str, bbox: &BoundingBox) -> PathBuf {
        let mut hasher = Sha256::new();
        hasher.update(extractor_id.as_bytes());
        hasher.update([0]);
        hasher.update(image_id.as_bytes());
        hasher.update([0]);
        for v in [bbox.xmin, bbox.ymin, bbox.xmax, bbox.ymax] {
            hasher.update(v.to_le_bytes());
        }
        let digest = hasher.finalize();
        self.dir.join(format!("{digest:x}.feat"))
    }

    pub fn load(
        &self,
        extractor_id: &str,
        image_id: &str,
        bbox: &BoundingBox,
    ) -> Option<FeatureVector> {
        let path = self.path_for(extractor_id, image_id, bbox);
        let bytes = std::fs::read(path).ok()?;
        crate::nn::bytes_to_f32s(&bytes, FEATURE_DIM)
            .ok()
            .and_then(|v| FeatureVector::new(v).ok())
    }

    pub fn store(
        &self,
        extractor_id: &str,
        image_id: &str,
        bbox: &BoundingBox,
        features: &FeatureVector,
    ) -> Result<()> {
        let path = self.path_for(extractor_id, image_id, bbox);
        std::fs::write(&path, crate::nn::f32s_to_bytes(features.values()))
            .map_err(|e| Error::io(&path, e))
    }
}
