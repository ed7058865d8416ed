//! On-disk annotation schema.
//!
//! Annotation files are JSON with three top-level arrays:
//!
//! ```json
//! {
//!   "images":      [{"id": 1, "file_name": "a.png", "width": 640, "height": 480}],
//!   "annotations": [{"image_id": 1, "bbox": [10.0, 20.0, 30.0, 40.0], "category_id": 0}],
//!   "categories":  [{"id": 0, "name": "Ascaris lumbricoides"}]
//! }
//! ```
//!
//! Boxes are stored as `[x, y, width, height]` on disk and converted to
//! corner form in memory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<AnnotationEntry>,
    pub categories: Vec<CategoryEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub image_id: u64,
    /// `[x, y, width, height]` in pixels.
    pub bbox: [f64; 4],
    pub category_id: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub id: u64,
    pub name: String,
}

impl AnnotationFile {
    pub fn read(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&raw).map_err(|e| Error::json(path, e))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let data = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::Schema(format!("annotation serialization failed: {e}")))?;
        std::fs::write(path, data).map_err(|e| Error::io(path, e))
    }
}

impl AnnotationEntry {
    /// Convert the stored x/y/w/h form to corner form. Fails for
    /// degenerate (non-positive width or height) boxes.
    pub fn corner_box(&self) -> Result<BoundingBox> {
        let [x, y, w, h] = self.bbox;
        BoundingBox::new(x, y, x + w, y + h)
    }
}

/// Corner form back to the stored x/y/w/h form.
pub fn to_xywh(b: &BoundingBox) -> [f64; 4] {
    [b.xmin, b.ymin, b.width(), b.height()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xywh_round_trip() {
        let entry = AnnotationEntry {
            image_id: 1,
            bbox: [10.0, 20.0, 30.0, 40.0],
            category_id: 0,
        };
        let b = entry.corner_box().unwrap();
        assert_eq!(b.xmax, 40.0);
        assert_eq!(b.ymax, 60.0);
        assert_eq!(to_xywh(&b), entry.bbox);
    }

    #[test]
    fn degenerate_bbox_fails_conversion() {
        let entry = AnnotationEntry {
            image_id: 1,
            bbox: [10.0, 20.0, 0.0, 40.0],
            category_id: 0,
        };
        assert!(entry.corner_box().is_err());
    }
}
