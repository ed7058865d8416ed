//! eggscan-core — two-stage localization and classification of parasitic
//! eggs in microscopy images.
//!
//! The pipeline stages are:
//!
//! 1. **Ingest** — load COCO-style annotations, validate against the fixed
//!    11-category taxonomy, split stratified train/val/test.
//! 2. **Detect** — a single-stage detector (behind a backend-neutral
//!    contract) proposes scored, class-labeled boxes; greedy NMS dedups.
//! 3. **Classify** — each detection crop is resized to 600, pushed through
//!    a frozen feature extractor (2560-wide), and re-scored by a
//!    calibrated one-vs-rest RBF SVM.
//! 4. **Fuse** — the two 11-way probability vectors are averaged; the
//!    argmax is the final label.
//! 5. **Evaluate** — greedy one-to-one box matching, IOU and confidence
//!    histograms, confusion matrix, accuracy and F1, mis-detection counts.
//!
//! A seeded synthetic egg generator provides a desk-scale substrate for
//! exercising the full code path without the real microscopy corpus.

pub mod categories;
pub mod classifier;
pub mod config;
pub mod dataset;
pub mod detector;
mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub(crate) mod nn;

pub use error::{Error, Result};
