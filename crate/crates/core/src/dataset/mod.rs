//! Dataset loading, validation, splitting, and preprocessing.
//!
//! The unit of data is an [`AnnotatedImage`]: decoded pixels plus
//! ground-truth boxes and category labels. Loading is strict about schema
//! errors (unknown categories, missing files) but tolerant of noisy
//! records: degenerate boxes are skipped with a warning instead of failing
//! the whole load.

pub mod coco;
mod preprocess;
mod synth;

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{rngs::StdRng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::categories::{CategoryId, NUM_CATEGORIES};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

pub use coco::{AnnotationEntry, AnnotationFile, CategoryEntry, ImageEntry};
pub use preprocess::{
    crop_box, preprocess_for_classifier, preprocess_for_detector, DetectorInput, NormalizedImage,
    CLASSIFIER_INPUT_SIDE, DETECTOR_INPUT_SIDE,
};
pub use synth::{synth_generate, SynthConfig};

/// An image with its ground-truth boxes and labels. Immutable after load.
#[derive(Debug, Clone)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub pixels: RgbImage,
    pub annotations: Vec<(BoundingBox, CategoryId)>,
}

impl AnnotatedImage {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

/// Result of a dataset load: the images plus the per-category annotation
/// counts and any warnings for skipped records.
#[derive(Debug)]
pub struct LoadedDataset {
    pub images: Vec<AnnotatedImage>,
    pub category_counts: [usize; NUM_CATEGORIES],
    pub warnings: Vec<String>,
}

/// Load a dataset from an image directory and an annotation file.
///
/// Every image referenced by the annotation file must exist and decode;
/// missing or unreadable images fail the load with one itemized error per
/// file. Unknown category names are schema errors. Degenerate boxes are
/// skipped with a warning.
pub fn load_dataset(root_path: &Path, annotation_path: &Path) -> Result<LoadedDataset> {
    let file = AnnotationFile::read(annotation_path)?;

    // Map the file's category ids onto the fixed taxonomy by name.
    let mut category_by_file_id: BTreeMap<u64, CategoryId> = BTreeMap::new();
    for entry in &file.categories {
        let id = CategoryId::from_name(&entry.name)?;
        if category_by_file_id.insert(entry.id, id).is_some() {
            return Err(Error::Schema(format!(
                "duplicate category id {} in annotation file",
                entry.id
            )));
        }
    }

    let mut annotations_by_image: BTreeMap<u64, Vec<&AnnotationEntry>> = BTreeMap::new();
    for ann in &file.annotations {
        annotations_by_image.entry(ann.image_id).or_default().push(ann);
    }

    let mut images = Vec::with_capacity(file.images.len());
    let mut warnings = Vec::new();
    let mut category_counts = [0usize; NUM_CATEGORIES];
    let mut item_errors = Vec::new();

    for entry in &file.images {
        let path = root_path.join(&entry.file_name);
        let decoded = match image::open(&path) {
            Ok(img) => img,
            Err(image::ImageError::IoError(e)) if e.kind() == std::io::ErrorKind::NotFound => {
                item_errors.push(format!("missing image file: {}", path.display()));
                continue;
            }
            Err(e) => {
                item_errors.push(format!("unreadable image {}: {e}", path.display()));
                continue;
            }
        };
        if decoded.color().channel_count() != 3 {
            warnings.push(format!(
                "{}: converted {}-channel image to 3-channel RGB",
                entry.file_name,
                decoded.color().channel_count()
            ));
        }
        let pixels = decoded.to_rgb8();
        let (w, h) = (pixels.width() as f64, pixels.height() as f64);

        let mut annotations = Vec::new();
        for ann in annotations_by_image.get(&entry.id).into_iter().flatten() {
            let category = match category_by_file_id.get(&ann.category_id) {
                Some(c) => *c,
                None => {
                    return Err(Error::Schema(format!(
                        "annotation references undeclared category id {}",
                        ann.category_id
                    )))
                }
            };
            let boxed = match ann.corner_box() {
                Ok(b) => b,
                Err(_) => {
                    warnings.push(format!(
                        "{}: skipped degenerate box {:?}",
                        entry.file_name, ann.bbox
                    ));
                    continue;
                }
            };
            if boxed.clamped(w, h).is_none() {
                warnings.push(format!(
                    "{}: skipped box {:?} outside image bounds",
                    entry.file_name, ann.bbox
                ));
                continue;
            }
            category_counts[category.index()] += 1;
            annotations.push((boxed, category));
        }

        images.push(AnnotatedImage {
            image_id: image_id_from_file_name(&entry.file_name),
            pixels,
            annotations,
        });
    }

    if !item_errors.is_empty() {
        return Err(Error::DatasetLoad { items: item_errors });
    }

    Ok(LoadedDataset {
        images,
        category_counts,
        warnings,
    })
}

/// In-memory image ids are the file stem, so prediction files produced
/// from bare image directories join cleanly against ground truth.
pub fn image_id_from_file_name(file_name: &str) -> String {
    Path::new(file_name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| file_name.to_string())
}

/// Write a dataset to `dir` as `images/*.png` plus `annotations.json` in
/// the documented schema.
pub fn write_dataset(images: &[AnnotatedImage], dir: &Path) -> Result<()> {
    let image_dir = dir.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;

    let mut file = AnnotationFile {
        images: Vec::new(),
        annotations: Vec::new(),
        categories: CategoryId::all()
            .map(|c| CategoryEntry {
                id: c.index() as u64,
                name: c.name().to_string(),
            })
            .collect(),
    };
    for (idx, img) in images.iter().enumerate() {
        let id = idx as u64;
        let file_name = format!("{}.png", img.image_id);
        let path = image_dir.join(&file_name);
        img.pixels.save(&path).map_err(|e| Error::image(&path, e))?;
        file.images.push(ImageEntry {
            id,
            file_name: format!("images/{file_name}"),
            width: img.width(),
            height: img.height(),
        });
        for (bbox, category) in &img.annotations {
            file.annotations.push(AnnotationEntry {
                image_id: id,
                bbox: coco::to_xywh(bbox),
                category_id: category.index() as u64,
            });
        }
    }
    file.write(&dir.join("annotations.json"))
}

/// Split ratios and the seed that makes the shuffle reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::Config(format!(
                "split fractions must be non-negative, got {fracs:?}"
            )));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {sum}, expected 1.0"
            )));
        }
        Ok(())
    }
}

/// Stratified train/val/test split.
///
/// Images are grouped per category (by their first annotation; unannotated
/// images form their own stratum), each stratum is shuffled with the seeded
/// RNG, and floor-rounded counts go to val and test with the remainder
/// assigned to train. Output order within each split follows the input
/// dataset order, so the split is deterministic for a fixed seed.
pub fn split_dataset(
    dataset: Vec<AnnotatedImage>,
    spec: &SplitSpec,
) -> Result<(Vec<AnnotatedImage>, Vec<AnnotatedImage>, Vec<AnnotatedImage>)> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("cannot split an empty dataset".to_string()));
    }

    // Stratum id per image: category of the first annotation, or an extra
    // bucket for images without annotations.
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); NUM_CATEGORIES + 1];
    for (idx, img) in dataset.iter().enumerate() {
        let stratum = img
            .annotations
            .first()
            .map(|(_, c)| c.index())
            .unwrap_or(NUM_CATEGORIES);
        strata[stratum].push(idx);
    }

    let mut rng = StdRng::seed_from_u64(spec.seed);
    #[derive(Clone, Copy, PartialEq)]
    enum Assign {
        Train,
        Val,
        Test,
    }
    let mut assignment = vec![Assign::Train; dataset.len()];
    for stratum in &mut strata {
        stratum.shuffle(&mut rng);
        let n = stratum.len();
        let n_val = (n as f64 * spec.val_frac).floor() as usize;
        let n_test = (n as f64 * spec.test_frac).floor() as usize;
        // Everything not floored into val/test stays in train, which is
        // where the rounding remainder lands.
        for (pos, &idx) in stratum.iter().enumerate() {
            assignment[idx] = if pos < n_val {
                Assign::Val
            } else if pos < n_val + n_test {
                Assign::Test
            } else {
                Assign::Train
            };
        }
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (img, assign) in dataset.into_iter().zip(assignment) {
        match assign {
            Assign::Train => train.push(img),
            Assign::Val => val.push(img),
            Assign::Test => test.push(img),
        }
    }
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::categories::CategoryId;

    fn tiny_image(image_id: &str, category: usize) -> AnnotatedImage {
        AnnotatedImage {
            image_id: image_id.to_string(),
            pixels: RgbImage::new(8, 8),
            annotations: vec![(
                BoundingBox::new(1.0, 1.0, 7.0, 7.0).unwrap(),
                CategoryId::new(category).unwrap(),
            )],
        }
    }

    #[test]
    fn split_ten_images_one_category() {
        let dataset: Vec<_> = (0..10).map(|i| tiny_image(&format!("img{i}"), 0)).collect();
        let (train, val, test) = split_dataset(dataset, &SplitSpec::default()).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (6, 2, 2));
    }

    #[test]
    fn split_all_to_train() {
        let dataset: Vec<_> = (0..7).map(|i| tiny_image(&format!("img{i}"), i % 3)).collect();
        let spec = SplitSpec {
            train_frac: 1.0,
            val_frac: 0.0,
            test_frac: 0.0,
            seed: 1,
        };
        let (train, val, test) = split_dataset(dataset, &spec).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (7, 0, 0));
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let dataset: Vec<_> = (0..110)
            .map(|i| tiny_image(&format!("img{i}"), i % 11))
            .collect();
        let spec = SplitSpec::default();
        let (train, val, test) = split_dataset(dataset.clone(), &spec).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (66, 22, 22));
        // Per-category: 10 images -> 6/2/2.
        for c in 0..11 {
            let count = |s: &[AnnotatedImage]| {
                s.iter()
                    .filter(|img| img.annotations[0].1.index() == c)
                    .count()
            };
            assert_eq!(count(&train), 6);
            assert_eq!(count(&val), 2);
            assert_eq!(count(&test), 2);
        }
        let (train2, val2, test2) = split_dataset(dataset, &spec).unwrap();
        let ids = |s: &[AnnotatedImage]| s.iter().map(|i| i.image_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&train), ids(&train2));
        assert_eq!(ids(&val), ids(&val2));
        assert_eq!(ids(&test), ids(&test2));
    }

    #[test]
    fn bad_fractions_rejected() {
        let dataset = vec![tiny_image("a", 0)];
        let spec = SplitSpec {
            train_frac: 0.5,
            val_frac: 0.5,
            test_frac: 0.5,
            seed: 1,
        };
        assert!(split_dataset(dataset, &spec).is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(split_dataset(Vec::new(), &SplitSpec::default()).is_err());
    }
}
