//! Decision fusion: combine the detector's class scores with the crop
//! classifier's class scores by componentwise averaging, then take the
//! argmax as the final label.
//!
//! Averaging two probability vectors keeps the result on the simplex, is
//! commutative, is the identity when both stages agree exactly, and
//! preserves a shared strict argmax.

use serde::{Deserialize, Serialize};

use crate::categories::{CategoryId, NUM_CATEGORIES};
use crate::classifier::{classify, FeatureExtractor, SvmModel};
use crate::dataset::{crop_box, preprocess_for_classifier, AnnotatedImage};
use crate::detector::{detect, DetectorModel};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Tolerance on the simplex-sum invariant.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// An 11-way probability vector: one score per category, each in `[0, 1]`,
/// summing to 1 within [`SIMPLEX_TOL`]. Serializes as a bare 11-element
/// array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores([f64; NUM_CATEGORIES]);

impl ClassScores {
    /// Validate and wrap an already-normalized probability vector.
    pub fn new(values: [f64; NUM_CATEGORIES]) -> Result<Self> {
        let scores = Self(values);
        scores.validate()?;
        Ok(scores)
    }

    /// Build scores from non-negative weights by normalizing to the simplex.
    /// All-zero weights yield the uniform vector.
    pub fn from_weights(weights: [f64; NUM_CATEGORIES]) -> Result<Self> {
        for (i, w) in weights.iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::Contract(format!(
                    "class weight {i} is {w}, expected finite and non-negative"
                )));
            }
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Ok(Self::uniform());
        }
        let mut values = weights;
        for v in &mut values {
            *v /= sum;
        }
        Ok(Self(values))
    }

    pub fn uniform() -> Self {
        Self([1.0 / NUM_CATEGORIES as f64; NUM_CATEGORIES])
    }

    pub fn one_hot(category: CategoryId) -> Self {
        let mut values = [0.0; NUM_CATEGORIES];
        values[category.index()] = 1.0;
        Self(values)
    }

    pub fn validate(&self) -> Result<()> {
        let mut sum = 0.0;
        for (i, v) in self.0.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 + SIMPLEX_TOL {
                return Err(Error::Contract(format!(
                    "class score {i} is {v}, expected a probability"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Contract(format!(
                "class scores sum to {sum}, expected 1 within {SIMPLEX_TOL}"
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64; NUM_CATEGORIES] {
        &self.0
    }

    pub fn get(&self, category: CategoryId) -> f64 {
        self.0[category.index()]
    }

    /// Index and value of the winning component, lowest index on ties.
    pub fn argmax(&self) -> (CategoryId, f64) {
        let mut best = 0;
        for i in 1..NUM_CATEGORIES {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        (CategoryId::new(best).expect("index in range"), self.0[best])
    }
}

/// Componentwise average of the two stages' probability vectors.
pub fn fuse_average(p_det: &ClassScores, p_svm: &ClassScores) -> Result<ClassScores> {
    p_det.validate()?;
    p_svm.validate()?;
    let mut values = [0.0; NUM_CATEGORIES];
    for i in 0..NUM_CATEGORIES {
        values[i] = (p_det.0[i] + p_svm.0[i]) / 2.0;
    }
    Ok(ClassScores(values))
}

/// Final label and its confidence from a fused score vector.
pub fn final_label(fused: &ClassScores) -> (CategoryId, f64) {
    fused.argmax()
}

/// One fused, labeled detection. Field names match the prediction JSON
/// schema; the per-stage score vectors are retained for audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalPrediction {
    pub image_id: String,
    pub bbox: BoundingBox,
    pub label_id: CategoryId,
    pub label_name: String,
    pub confidence: f64,
    pub fused_scores: ClassScores,
    pub det_scores: ClassScores,
    pub svm_scores: ClassScores,
}

/// Run the full two-stage pipeline on one image: detect, crop each
/// detection, classify the crop, fuse the two score vectors, and label.
///
/// An image where the detector finds nothing yields an empty list; the
/// caller records it as a mis-detection. There is no whole-image
/// classifier fallback.
pub fn predict_pipeline(
    det_model: &DetectorModel,
    svm_model: &SvmModel,
    extractor: &dyn FeatureExtractor,
    img: &AnnotatedImage,
) -> Result<Vec<FinalPrediction>> {
    if det_model.categories != svm_model.categories {
        return Err(Error::Config(
            "detector and SVM checkpoints carry different category maps".to_string(),
        ));
    }
    let detections = detect(det_model, img)?;
    let mut out = Vec::with_capacity(detections.len());
    for det in detections {
        let crop = crop_box(img, &det.bbox)?;
        let normalized = preprocess_for_classifier(&crop)?;
        let features = extractor.extract(&normalized)?;
        let svm_scores = classify(svm_model, &features)?;
        let fused = fuse_average(&det.scores, &svm_scores)?;
        let (label_id, confidence) = final_label(&fused);
        out.push(FinalPrediction {
            image_id: img.image_id.clone(),
            bbox: det.bbox,
            label_id,
            label_name: label_id.name().to_string(),
            confidence,
            fused_scores: fused,
            det_scores: det.scores,
            svm_scores,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(i: usize) -> CategoryId {
        CategoryId::new(i).unwrap()
    }

    #[test]
    fn fuse_equal_one_hots_is_identity() {
        let p = ClassScores::one_hot(cat(3));
        let fused = fuse_average(&p, &p).unwrap();
        assert_eq!(fused, p);
    }

    #[test]
    fn fuse_uniform_with_one_hot() {
        let uniform = ClassScores::uniform();
        let hot = ClassScores::one_hot(cat(7));
        let fused = fuse_average(&uniform, &hot).unwrap();
        let expected = (1.0 / 11.0 + 1.0) / 2.0;
        assert!((fused.get(cat(7)) - expected).abs() < 1e-15);
        assert_eq!(final_label(&fused).0, cat(7));
    }

    #[test]
    fn fuse_flips_detector_label() {
        let mut det = [0.0; NUM_CATEGORIES];
        det[0] = 0.7;
        det[1] = 0.3;
        let mut svm = [0.0; NUM_CATEGORIES];
        svm[0] = 0.2;
        svm[1] = 0.8;
        let fused = fuse_average(
            &ClassScores::new(det).unwrap(),
            &ClassScores::new(svm).unwrap(),
        )
        .unwrap();
        assert!((fused.get(cat(0)) - 0.45).abs() < 1e-15);
        assert!((fused.get(cat(1)) - 0.55).abs() < 1e-15);
        assert_eq!(final_label(&fused).0, cat(1));
    }

    #[test]
    fn final_label_tie_breaks_to_lowest_index() {
        let mut values = [0.0; NUM_CATEGORIES];
        values[2] = 0.5;
        values[9] = 0.5;
        let scores = ClassScores::new(values).unwrap();
        let (label, conf) = final_label(&scores);
        assert_eq!(label, cat(2));
        assert_eq!(conf, 0.5);
    }

    #[test]
    fn final_label_on_one_hot_and_uniform() {
        assert_eq!(
            final_label(&ClassScores::one_hot(cat(5))),
            (cat(5), 1.0)
        );
        let (label, conf) = final_label(&ClassScores::uniform());
        assert_eq!(label, cat(0));
        assert!((conf - 1.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn non_simplex_input_rejected() {
        let mut values = [0.0; NUM_CATEGORIES];
        values[0] = 0.8;
        values[1] = 0.8;
        assert!(ClassScores::new(values).is_err());
        let bad = ClassScores(values);
        assert!(fuse_average(&bad, &ClassScores::uniform()).is_err());
    }

    #[test]
    fn from_weights_normalizes_and_handles_zero() {
        let mut w = [0.0; NUM_CATEGORIES];
        w[1] = 2.0;
        w[4] = 6.0;
        let scores = ClassScores::from_weights(w).unwrap();
        assert!((scores.get(cat(1)) - 0.25).abs() < 1e-15);
        assert!((scores.get(cat(4)) - 0.75).abs() < 1e-15);
        assert_eq!(
            ClassScores::from_weights([0.0; NUM_CATEGORIES]).unwrap(),
            ClassScores::uniform()
        );
        let mut nan = [0.1; NUM_CATEGORIES];
        nan[3] = f64::NAN;
        assert!(ClassScores::from_weights(nan).is_err());
    }
}
