//! Backend-neutral detector contract and registry.
//!
//! A backend owns its network, loss, and optimizer; the pipeline only
//! requires that it trains from annotated images, reports a per-epoch loss
//! log, infers scored boxes in the normalized input frame, and can
//! round-trip its weights bit-exactly.

use crate::dataset::{AnnotatedImage, NormalizedImage};
use crate::error::{Error, Result};
use crate::fusion::ClassScores;
use crate::geometry::BoundingBox;

use super::{DetectorConfig, EpochStats};

/// A candidate detection in the normalized (`input_side`) coordinate
/// frame, before score filtering and NMS.
#[derive(Debug, Clone)]
pub struct RawDetection {
    pub bbox: BoundingBox,
    pub scores: ClassScores,
}

pub trait DetectorBackend: Send {
    fn id(&self) -> &'static str;

    /// Whether training and inference are bit-reproducible for a fixed
    /// seed. Non-deterministic backends are flagged in the training log.
    fn deterministic(&self) -> bool;

    fn train(
        &mut self,
        train: &[AnnotatedImage],
        val: &[AnnotatedImage],
        config: &DetectorConfig,
        seed: u64,
    ) -> Result<Vec<EpochStats>>;

    fn infer(&self, image: &NormalizedImage) -> Vec<RawDetection>;

    fn export_weights(&self) -> Vec<u8>;

    fn import_weights(&mut self, bytes: &[u8]) -> Result<()>;
}

/// Backbone ids accepted by [`create_detector_backend`].
pub const DETECTOR_BACKENDS: &[&str] = &["tiny-ref", "efficientdet"];

pub fn create_detector_backend(id: &str) -> Result<Box<dyn DetectorBackend>> {
    match id {
        "tiny-ref" => Ok(Box::new(super::tiny::TinyDetector::new())),
        // The published EfficientDet family satisfies this contract but
        // needs pretrained weights and an accelerator runtime that are not
        // bundled with this build.
        "efficientdet" | "efficientdet-d0" | "efficientnet-v2" => Err(Error::Capability(format!(
            "detector backend {id:?} is registered but unavailable: requires external pretrained weights and a GPU runtime"
        ))),
        other => Err(Error::Config(format!(
            "unknown detector backbone {other:?}; registered: {DETECTOR_BACKENDS:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_entries() {
        assert!(create_detector_backend("tiny-ref").is_ok());
        assert!(matches!(
            create_detector_backend("efficientdet"),
            Err(Error::Capability(_))
        ));
        assert!(matches!(
            create_detector_backend("yolo9000"),
            Err(Error::Config(_))
        ));
    }
}
