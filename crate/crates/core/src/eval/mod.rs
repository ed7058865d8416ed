//! Evaluation battery: IOU distribution, confidence distribution,
//! mis-detection accounting, confusion matrix, and accuracy/F1 metrics.
//!
//! Matching is greedy one-to-one in descending prediction confidence:
//! each prediction consumes the unmatched ground-truth box of highest IOU
//! if that IOU clears the threshold. Predictions that cannot be paired
//! (low IOU, or every ground truth already consumed) and ground truths
//! that never get matched both become `matched = false` records.
//! Classification metrics are computed over matched pairs only; the
//! report additionally counts mis-detected images (no matched prediction
//! at all) and emits accuracy under both conventions.

mod plot;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::categories::{CategoryId, NUM_CATEGORIES};
use crate::config::FORMAT_VERSION;
use crate::error::{Error, Result};
use crate::fusion::FinalPrediction;
use crate::geometry::BoundingBox;

pub use crate::geometry::iou;

/// The outcome of pairing one prediction or one ground-truth box.
/// Category labels are present only on matched records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchResult {
    pub image_id: String,
    pub matched: bool,
    pub iou: f64,
    pub pred_label: Option<CategoryId>,
    pub true_label: Option<CategoryId>,
    pub pred_confidence: Option<f64>,
}

/// Greedy one-to-one matching for a single image.
pub fn match_detections(
    image_id: &str,
    preds: &[FinalPrediction],
    gts: &[(BoundingBox, CategoryId)],
    iou_threshold: f64,
) -> Vec<MatchResult> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|a, b| {
        preds[*b]
            .confidence
            .partial_cmp(&preds[*a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut gt_used = vec![false; gts.len()];
    let mut results = Vec::with_capacity(preds.len() + gts.len());
    for idx in order {
        let pred = &preds[idx];
        let mut best: Option<(usize, f64)> = None;
        for (j, (gt_box, _)) in gts.iter().enumerate() {
            if gt_used[j] {
                continue;
            }
            let overlap = iou(&pred.bbox, gt_box);
            if best.map_or(true, |(_, b)| overlap > b) {
                best = Some((j, overlap));
            }
        }
        match best {
            Some((j, overlap)) if overlap >= iou_threshold => {
                gt_used[j] = true;
                results.push(MatchResult {
                    image_id: image_id.to_string(),
                    matched: true,
                    iou: overlap,
                    pred_label: Some(pred.label_id),
                    true_label: Some(gts[j].1),
                    pred_confidence: Some(pred.confidence),
                });
            }
            best => {
                results.push(MatchResult {
                    image_id: image_id.to_string(),
                    matched: false,
                    iou: best.map_or(0.0, |(_, b)| b),
                    pred_label: None,
                    true_label: None,
                    pred_confidence: Some(pred.confidence),
                });
            }
        }
    }
    for (j, used) in gt_used.iter().enumerate() {
        if !used {
            let _ = &gts[j];
            results.push(MatchResult {
                image_id: image_id.to_string(),
                matched: false,
                iou: 0.0,
                pred_label: None,
                true_label: None,
                pred_confidence: None,
            });
        }
    }
    results
}

/// Binned counts over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bins: usize) -> Self {
        Self {
            bins,
            lo: 0.0,
            hi: 1.0,
            counts: vec![0; bins],
        }
    }

    pub fn add(&mut self, value: f64) {
        let clamped = value.clamp(self.lo, self.hi);
        let idx = ((clamped - self.lo) / (self.hi - self.lo) * self.bins as f64) as usize;
        self.counts[idx.min(self.bins - 1)] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format_version: u32,
    /// Hash of the run config that produced this report; filled in by the
    /// caller that owns the config.
    pub config_hash: Option<String>,
    /// IOU distribution over matched detections.
    pub iou_histogram: Histogram,
    /// Confidence distribution over matched detections.
    pub confidence_histogram: Histogram,
    /// Rows = true category, columns = predicted category; matched pairs only.
    pub confusion: Vec<Vec<u64>>,
    /// Fraction of matched detections with the correct label; undefined
    /// (None) when nothing matched.
    pub accuracy: Option<f64>,
    pub accuracy_defined: bool,
    /// Accuracy counting each mis-detected image as an error.
    pub accuracy_including_misdetections: Option<f64>,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    /// Records (predictions or ground truths) left unmatched.
    pub misdetections: u64,
    /// Images with no matched prediction at all.
    pub misdetected_images: u64,
    pub matched: u64,
    pub total_images: u64,
}

/// Aggregate match results from a full test run into the report.
pub fn build_report(matches: &[MatchResult], bins: usize) -> Result<EvaluationReport> {
    if bins == 0 {
        return Err(Error::Config("histogram bin count must be at least 1".into()));
    }
    let mut iou_histogram = Histogram::new(bins);
    let mut confidence_histogram = Histogram::new(bins);
    let mut confusion = vec![vec![0u64; NUM_CATEGORIES]; NUM_CATEGORIES];
    let mut misdetections = 0u64;
    let mut matched = 0u64;
    let mut all_images = BTreeSet::new();
    let mut images_with_match = BTreeSet::new();

    for m in matches {
        all_images.insert(m.image_id.as_str());
        if m.matched {
            matched += 1;
            images_with_match.insert(m.image_id.as_str());
            iou_histogram.add(m.iou);
            if let Some(conf) = m.pred_confidence {
                confidence_histogram.add(conf);
            }
            let (t, p) = match (m.true_label, m.pred_label) {
                (Some(t), Some(p)) => (t, p),
                _ => {
                    return Err(Error::Contract(
                        "matched record without both labels".into(),
                    ))
                }
            };
            confusion[t.index()][p.index()] += 1;
        } else {
            misdetections += 1;
        }
    }

    let misdetected_images = (all_images.len() - images_with_match.len()) as u64;
    let trace: u64 = (0..NUM_CATEGORIES).map(|k| confusion[k][k]).sum();

    let mut per_class_precision = vec![0.0; NUM_CATEGORIES];
    let mut per_class_recall = vec![0.0; NUM_CATEGORIES];
    let mut per_class_f1 = vec![0.0; NUM_CATEGORIES];
    for k in 0..NUM_CATEGORIES {
        let tp = confusion[k][k];
        let row: u64 = confusion[k].iter().sum();
        let col: u64 = (0..NUM_CATEGORIES).map(|t| confusion[t][k]).sum();
        let precision = if col > 0 { tp as f64 / col as f64 } else { 0.0 };
        let recall = if row > 0 { tp as f64 / row as f64 } else { 0.0 };
        per_class_precision[k] = precision;
        per_class_recall[k] = recall;
        per_class_f1[k] = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    let macro_f1 = per_class_f1.iter().sum::<f64>() / NUM_CATEGORIES as f64;

    let accuracy = (matched > 0).then(|| trace as f64 / matched as f64);
    let micro_f1 = accuracy.unwrap_or(0.0);
    let strict_denominator = matched + misdetected_images;
    let accuracy_including_misdetections =
        (strict_denominator > 0).then(|| trace as f64 / strict_denominator as f64);

    Ok(EvaluationReport {
        format_version: FORMAT_VERSION,
        config_hash: None,
        iou_histogram,
        confidence_histogram,
        confusion,
        accuracy,
        accuracy_defined: accuracy.is_some(),
        accuracy_including_misdetections,
        per_class_precision,
        per_class_recall,
        per_class_f1,
        macro_f1,
        micro_f1,
        misdetections,
        misdetected_images,
        matched,
        total_images: all_images.len() as u64,
    })
}

/// Render the report to `out_dir`: machine-readable JSON, the confusion
/// matrix as CSV, and three plot images. Returns the written paths. The
/// JSON bytes are a pure function of the report.
pub fn export_plots(report: &EvaluationReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let json_path = out_dir.join("report.json");
    let json = serde_json::to_vec_pretty(report)
        .map_err(|e| Error::Schema(format!("report serialization failed: {e}")))?;
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;

    let csv_path = out_dir.join("confusion.csv");
    std::fs::write(&csv_path, confusion_csv(report)).map_err(|e| Error::io(&csv_path, e))?;

    let iou_path = out_dir.join("iou_hist.png");
    plot::render_histogram(&report.iou_histogram, "IOU OF MATCHED DETECTIONS")
        .save(&iou_path)
        .map_err(|e| Error::image(&iou_path, e))?;

    let conf_path = out_dir.join("confidence_hist.png");
    plot::render_histogram(&report.confidence_histogram, "PREDICTION CONFIDENCE")
        .save(&conf_path)
        .map_err(|e| Error::image(&conf_path, e))?;

    let matrix_path = out_dir.join("confusion_matrix.png");
    plot::render_confusion(&report.confusion)
        .save(&matrix_path)
        .map_err(|e| Error::image(&matrix_path, e))?;

    Ok(vec![json_path, csv_path, iou_path, conf_path, matrix_path])
}

fn confusion_csv(report: &EvaluationReport) -> String {
    let mut out = String::from("true\\pred");
    for k in 0..NUM_CATEGORIES {
        out.push(',');
        out.push_str(CategoryId::new(k).expect("fixed range").name());
    }
    out.push('\n');
    for (t, row) in report.confusion.iter().enumerate() {
        out.push_str(CategoryId::new(t).expect("fixed range").name());
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}
