//! Subcommand implementations.
//!
//! Every artifact written here carries a format version and the hash of
//! the effective run config, and contains no timestamps: rerunning a
//! command with the same config and seed reproduces the artifact bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use eggscan_core::categories::CategoryId;
use eggscan_core::classifier::{
    create_feature_extractor, train_svm, FeatureCache, FeatureVector, SvmModel, TrainOn,
};
use eggscan_core::config::{RunConfig, FORMAT_VERSION};
use eggscan_core::dataset::{
    crop_box, image_id_from_file_name, load_dataset, preprocess_for_classifier, split_dataset,
    synth_generate, write_dataset, AnnotatedImage, AnnotationFile, SynthConfig,
};
use eggscan_core::detector::{
    detect, load_checkpoint, save_checkpoint, train_detector, Detection, DetectorModel,
    ImageDetections,
};
use eggscan_core::eval::{build_report, export_plots, match_detections, EvaluationReport};
use eggscan_core::fusion::{predict_pipeline, FinalPrediction};
use eggscan_core::geometry::BoundingBox;
use eggscan_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Detector,
    Svm,
    All,
}

/// Load the run config, then apply `--set key=value` overrides (dotted
/// paths into the JSON tree) and the `--seed` override.
pub fn load_effective_config(
    path: &Path,
    seed_override: Option<u64>,
    sets: &[String],
) -> Result<RunConfig> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut value: serde_json::Value =
        serde_json::from_slice(&raw).map_err(|e| Error::json(path, e))?;
    for entry in sets {
        let (key, text) = entry.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects key=value, got {entry:?}"))
        })?;
        let parsed: serde_json::Value = serde_json::from_str(text)
            .unwrap_or_else(|_| serde_json::Value::String(text.to_string()));
        let mut node = &mut value;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            node = node
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("--set path {key:?} does not traverse an object")))?
                .entry(part.to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default()));
        }
        node.as_object_mut()
            .ok_or_else(|| Error::Config(format!("--set path {key:?} does not traverse an object")))?
            .insert(parts[parts.len() - 1].to_string(), parsed);
    }
    if let Some(seed) = seed_override {
        value["seed"] = serde_json::Value::from(seed);
    }
    let config: RunConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("invalid run config after overrides: {e}")))?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub split: String,
    pub image_ids: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let json = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Schema(format!("serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&raw).map_err(|e| Error::json(path, e))
}

fn manifest_path(config: &RunConfig, split: &str) -> PathBuf {
    config.paths.output_dir.join("splits").join(format!("{split}.json"))
}

/// Load, validate, and split the dataset; write one image-id manifest per
/// split. Idempotent for a fixed config and seed.
pub fn cmd_split(config: &RunConfig) -> Result<()> {
    let loaded = load_dataset(&config.paths.dataset_root, &config.paths.annotations)?;
    for warning in &loaded.warnings {
        eprintln!("warning: {warning}");
    }
    println!("loaded {} images", loaded.images.len());
    for id in CategoryId::all() {
        println!("  {:>4} annotations: {}", loaded.category_counts[id.index()], id.name());
    }
    let (train, val, test) = split_dataset(loaded.images, &config.split)?;
    let hash = config.hash();
    for (name, subset) in [("train", &train), ("val", &val), ("test", &test)] {
        let manifest = SplitManifest {
            format_version: FORMAT_VERSION,
            config_hash: hash.clone(),
            split: name.to_string(),
            image_ids: subset.iter().map(|img| img.image_id.clone()).collect(),
        };
        write_json(&manifest_path(config, name), &manifest)?;
    }
    println!(
        "split {} / {} / {} (train/val/test) -> {}",
        train.len(),
        val.len(),
        test.len(),
        config.paths.output_dir.join("splits").display()
    );
    Ok(())
}

fn load_split(
    config: &RunConfig,
    by_id: &mut BTreeMap<String, AnnotatedImage>,
    split: &str,
) -> Result<Vec<AnnotatedImage>> {
    let path = manifest_path(config, split);
    if !path.exists() {
        return Err(Error::Config(format!(
            "split manifest {} not found; run `eggscan split --config <config>` first",
            path.display()
        )));
    }
    let manifest: SplitManifest = read_json(&path)?;
    manifest
        .image_ids
        .iter()
        .map(|id| {
            by_id.remove(id).ok_or_else(|| {
                Error::Schema(format!("manifest {split} references unknown image id {id:?}"))
            })
        })
        .collect()
}

fn detector_checkpoint_dir(config: &RunConfig) -> PathBuf {
    config.paths.checkpoint_dir.join("detector")
}

fn svm_model_path(config: &RunConfig) -> PathBuf {
    config.paths.checkpoint_dir.join("svm_model.bin")
}

/// One JSON object per line; the first line identifies the run.
fn write_jsonl(path: &Path, header: &serde_json::Value, lines: &[serde_json::Value]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut out = String::new();
    out.push_str(&header.to_string());
    out.push('\n');
    for line in lines {
        out.push_str(&line.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Train the requested stage(s) from the split manifests and persist
/// checkpoints plus line-oriented training logs.
pub fn cmd_train(config: &RunConfig, stage: Stage) -> Result<()> {
    let loaded = load_dataset(&config.paths.dataset_root, &config.paths.annotations)?;
    let mut by_id: BTreeMap<String, AnnotatedImage> = loaded
        .images
        .into_iter()
        .map(|img| (img.image_id.clone(), img))
        .collect();
    let train = load_split(config, &mut by_id, "train")?;
    let val = load_split(config, &mut by_id, "val")?;
    drop(by_id);
    let hash = config.hash();

    if matches!(stage, Stage::Detector | Stage::All) {
        let model = train_detector(&train, &val, &config.detector, config.seed)?;
        let dir = detector_checkpoint_dir(config);
        save_checkpoint(&model, &dir)?;
        let header = serde_json::json!({
            "format_version": FORMAT_VERSION,
            "config_hash": hash,
            "stage": "detector",
            "backbone_id": config.detector.backbone_id,
            "seed": config.seed,
            "deterministic": model.training_log.deterministic,
        });
        let lines: Vec<serde_json::Value> = model
            .training_log
            .entries
            .iter()
            .map(|e| serde_json::json!({"epoch": e.epoch, "train_loss": e.train_loss, "val_loss": e.val_loss}))
            .collect();
        write_jsonl(&config.paths.output_dir.join("logs/detector_train.jsonl"), &header, &lines)?;
        let last = model.training_log.entries.last();
        println!(
            "detector trained ({} epochs, final loss {:.6}) -> {}",
            model.training_log.entries.len(),
            last.map(|e| e.train_loss).unwrap_or(f64::NAN),
            dir.display()
        );
    }

    if matches!(stage, Stage::Svm | Stage::All) {
        let extractor = create_feature_extractor(&config.extractor.backbone_id)?;
        let cache = match &config.extractor.cache_dir {
            Some(dir) => Some(FeatureCache::open(dir)?),
            None => None,
        };
        let detector = match config.svm.train_on {
            TrainOn::Gt => None,
            TrainOn::Pred => Some(load_checkpoint(&detector_checkpoint_dir(config))?),
        };

        let mut features = Vec::new();
        let mut labels = Vec::new();
        collect_crop_features(
            &train,
            extractor.as_ref(),
            cache.as_ref(),
            detector.as_ref(),
            &mut features,
            &mut labels,
        )?;
        let mut cal_features = Vec::new();
        let mut cal_labels = Vec::new();
        collect_crop_features(
            &val,
            extractor.as_ref(),
            cache.as_ref(),
            None,
            &mut cal_features,
            &mut cal_labels,
        )?;

        let model = train_svm(&features, &labels, &config.svm, &cal_features, &cal_labels)?;
        let path = svm_model_path(config);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        model.save(&path)?;
        let header = serde_json::json!({
            "format_version": FORMAT_VERSION,
            "config_hash": hash,
            "stage": "svm",
            "backbone_id": config.extractor.backbone_id,
            "seed": config.seed,
        });
        let line = serde_json::json!({
            "train_samples": features.len(),
            "calibration_samples": cal_features.len(),
            "gamma": model.gamma,
            "train_accuracy": model.train_accuracy,
        });
        write_jsonl(&config.paths.output_dir.join("logs/svm_train.jsonl"), &header, &[line])?;
        println!(
            "svm trained on {} crops (train accuracy {:.4}) -> {}",
            features.len(),
            model.train_accuracy,
            path.display()
        );
    }
    Ok(())
}

/// Crop source for SVM training: ground-truth boxes, or (when a detector
/// is passed) the detector's top box per annotation image, falling back to
/// ground truth when the detector finds nothing.
fn collect_crop_features(
    images: &[AnnotatedImage],
    extractor: &dyn eggscan_core::classifier::FeatureExtractor,
    cache: Option<&FeatureCache>,
    detector: Option<&DetectorModel>,
    features: &mut Vec<FeatureVector>,
    labels: &mut Vec<CategoryId>,
) -> Result<()> {
    for img in images {
        let predicted_box = match detector {
            Some(model) => detect(model, img)?.first().map(|d| d.bbox),
            None => None,
        };
        for (gt_box, category) in &img.annotations {
            let bbox = predicted_box.unwrap_or(*gt_box);
            let feature = extract_cached(extractor, cache, img, &bbox)?;
            features.push(feature);
            labels.push(*category);
        }
    }
    Ok(())
}

fn extract_cached(
    extractor: &dyn eggscan_core::classifier::FeatureExtractor,
    cache: Option<&FeatureCache>,
    img: &AnnotatedImage,
    bbox: &BoundingBox,
) -> Result<FeatureVector> {
    if let Some(cache) = cache {
        if let Some(hit) = cache.load(extractor.id(), &img.image_id, bbox) {
            return Ok(hit);
        }
    }
    let crop = crop_box(img, bbox)?;
    let normalized = preprocess_for_classifier(&crop)?;
    let feature = extractor.extract(&normalized)?;
    if let Some(cache) = cache {
        cache.store(extractor.id(), &img.image_id, bbox, &feature)?;
    }
    Ok(feature)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImagePredictions {
    pub image_id: String,
    pub predictions: Vec<FinalPrediction>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictError {
    pub file: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub format_version: u32,
    pub config_hash: String,
    pub images: Vec<ImagePredictions>,
    pub errors: Vec<PredictError>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionsFile {
    pub format_version: u32,
    pub config_hash: String,
    pub images: Vec<ImageDetections>,
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

fn list_input_images(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let entries = std::fs::read_dir(input).map_err(|e| Error::io(input, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Run the fused pipeline over an image file or directory. Writes the
/// fused predictions file plus the detector-level detections file. Images
/// with zero detections are recorded with an empty prediction list;
/// unreadable files become error entries.
pub fn cmd_predict(
    config: &RunConfig,
    input: &Path,
    out: Option<&Path>,
    fail_on_error: bool,
) -> Result<PathBuf> {
    let det_model = load_checkpoint(&detector_checkpoint_dir(config))?;
    let svm_model = SvmModel::load(&svm_model_path(config))?;
    let extractor = create_feature_extractor(&config.extractor.backbone_id)?;

    let mut file = PredictionsFile {
        format_version: FORMAT_VERSION,
        config_hash: config.hash(),
        images: Vec::new(),
        errors: Vec::new(),
    };
    let mut detections_file = DetectionsFile {
        format_version: FORMAT_VERSION,
        config_hash: file.config_hash.clone(),
        images: Vec::new(),
    };

    for path in list_input_images(input)? {
        let image_id = image_id_from_file_name(&path.file_name().unwrap_or_default().to_string_lossy());
        let decoded = match image::open(&path) {
            Ok(img) => img.to_rgb8(),
            Err(e) => {
                file.errors.push(PredictError {
                    file: path.display().to_string(),
                    error: e.to_string(),
                });
                continue;
            }
        };
        let img = AnnotatedImage {
            image_id: image_id.clone(),
            pixels: decoded,
            annotations: Vec::new(),
        };
        let predictions = predict_pipeline(&det_model, &svm_model, extractor.as_ref(), &img)?;
        detections_file.images.push(ImageDetections {
            image_id: image_id.clone(),
            detections: predictions
                .iter()
                .map(|p| Detection::new(p.bbox, p.det_scores))
                .collect::<Result<Vec<_>>>()?,
        });
        file.images.push(ImagePredictions {
            image_id,
            predictions,
        });
    }

    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.paths.output_dir.join("predictions.json"));
    write_json(&out_path, &file)?;
    let detections_path = out_path.with_file_name("detections.json");
    write_json(&detections_path, &detections_file)?;

    let with_detections = file.images.iter().filter(|i| !i.predictions.is_empty()).count();
    println!(
        "predicted {} image(s), {} with detections, {} error(s) -> {}",
        file.images.len(),
        with_detections,
        file.errors.len(),
        out_path.display()
    );
    if fail_on_error && !file.errors.is_empty() {
        return Err(Error::Contract(format!(
            "{} input file(s) failed to load",
            file.errors.len()
        )));
    }
    Ok(out_path)
}

/// Ground-truth boxes straight from the annotation file (no pixel IO).
fn load_ground_truth(path: &Path) -> Result<BTreeMap<String, Vec<(BoundingBox, CategoryId)>>> {
    let file = AnnotationFile::read(path)?;
    let mut category_by_file_id = BTreeMap::new();
    for entry in &file.categories {
        category_by_file_id.insert(entry.id, CategoryId::from_name(&entry.name)?);
    }
    let mut id_by_image: BTreeMap<u64, String> = BTreeMap::new();
    let mut out: BTreeMap<String, Vec<(BoundingBox, CategoryId)>> = BTreeMap::new();
    for entry in &file.images {
        let image_id = image_id_from_file_name(&entry.file_name);
        id_by_image.insert(entry.id, image_id.clone());
        out.entry(image_id).or_default();
    }
    for ann in &file.annotations {
        let image_id = id_by_image.get(&ann.image_id).ok_or_else(|| {
            Error::Schema(format!("annotation references unknown image id {}", ann.image_id))
        })?;
        let category = *category_by_file_id.get(&ann.category_id).ok_or_else(|| {
            Error::Schema(format!("annotation references undeclared category {}", ann.category_id))
        })?;
        match ann.corner_box() {
            Ok(bbox) => out.get_mut(image_id).expect("inserted above").push((bbox, category)),
            Err(_) => eprintln!(
                "warning: skipped degenerate box {:?} for image {image_id}",
                ann.bbox
            ),
        }
    }
    Ok(out)
}

/// Match predictions against ground truth and write the report JSON, the
/// confusion CSV, and the three plot files.
///
/// When `split` names a split manifest, ground truth is first restricted
/// to that split's image ids; the prediction and ground-truth id sets must
/// then agree exactly.
pub fn cmd_evaluate(
    config: &RunConfig,
    predictions_path: Option<&Path>,
    ground_truth_path: Option<&Path>,
    out_dir: Option<&Path>,
    split: Option<&str>,
) -> Result<EvaluationReport> {
    let predictions_path = predictions_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.paths.output_dir.join("predictions.json"));
    let ground_truth_path = ground_truth_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.paths.annotations.clone());
    let out_dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.paths.output_dir.join("report"));

    let predictions: PredictionsFile = read_json(&predictions_path)?;
    let mut ground_truth = load_ground_truth(&ground_truth_path)?;
    if let Some(name) = split {
        let manifest: SplitManifest = read_json(&manifest_path(config, name))?;
        let keep: std::collections::BTreeSet<&String> = manifest.image_ids.iter().collect();
        ground_truth.retain(|id, _| keep.contains(id));
    }

    let pred_ids: Vec<&str> = predictions.images.iter().map(|i| i.image_id.as_str()).collect();
    let missing_gt: Vec<&&str> = pred_ids
        .iter()
        .filter(|id| !ground_truth.contains_key(**id))
        .collect();
    if !missing_gt.is_empty() {
        return Err(Error::Schema(format!(
            "{} predicted image id(s) missing from ground truth: {:?}",
            missing_gt.len(),
            missing_gt.iter().take(20).collect::<Vec<_>>()
        )));
    }
    let have_preds: std::collections::BTreeSet<&str> = pred_ids.iter().copied().collect();
    let missing_preds: Vec<&str> = ground_truth
        .keys()
        .map(String::as_str)
        .filter(|id| !have_preds.contains(id))
        .collect();
    if !missing_preds.is_empty() {
        return Err(Error::Schema(format!(
            "{} ground-truth image id(s) missing from predictions: {:?}",
            missing_preds.len(),
            missing_preds.iter().take(20).collect::<Vec<_>>()
        )));
    }

    let mut matches = Vec::new();
    for image in &predictions.images {
        let gts = &ground_truth[&image.image_id];
        matches.extend(match_detections(
            &image.image_id,
            &image.predictions,
            gts,
            config.evaluation.iou_threshold,
        ));
    }
    let mut report = build_report(&matches, config.evaluation.histogram_bins)?;
    report.config_hash = Some(config.hash());
    let files = export_plots(&report, &out_dir)?;
    println!(
        "evaluated {} image(s): accuracy {} macro-F1 {:.4} misdetected images {}",
        report.total_images,
        report
            .accuracy
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "undefined".to_string()),
        report.macro_f1,
        report.misdetected_images
    );
    for f in files {
        println!("  wrote {}", f.display());
    }
    Ok(report)
}

/// Generate the synthetic dataset described by a key-value params file
/// into `out/images` + `out/annotations.json`.
pub fn cmd_synth(params: Option<&Path>, out: &Path, seed_override: Option<u64>) -> Result<()> {
    let config = match params {
        Some(path) => SynthConfig::from_kv_file(path)?,
        None => SynthConfig::default(),
    };
    let seed = seed_override.unwrap_or(config.seed);
    let images = synth_generate(&config, seed)?;
    write_dataset(&images, out)?;
    println!(
        "generated {} synthetic images ({} per class) -> {}",
        images.len(),
        config.per_class_count,
        out.display()
    );
    Ok(())
}
