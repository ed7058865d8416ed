//! Axis-aligned bounding boxes and overlap measures.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle, origin top-left, corners in image
/// coordinates. `xmin < xmax` and `ymin < ymax` always hold for a
/// validated box.
///
/// Serializes as the corner array `[xmin, ymin, xmax, ymax]`, which is the
/// format used by every JSON artifact in this pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [self.xmin, self.ymin, self.xmax, self.ymax].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [xmin, ymin, xmax, ymax] = <[f64; 4]>::deserialize(deserializer)?;
        BoundingBox::new(xmin, ymin, xmax, ymax).map_err(D::Error::custom)
    }
}

impl BoundingBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let b = Self {
            xmin,
            ymin,
            xmax,
            ymax,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.xmin, self.ymin, self.xmax, self.ymax]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.xmin >= self.xmax || self.ymin >= self.ymax {
            return Err(Error::Contract(format!(
                "degenerate box ({}, {}, {}, {})",
                self.xmin, self.ymin, self.xmax, self.ymax
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Scale corners by independent per-axis factors.
    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self {
            xmin: self.xmin * sx,
            ymin: self.ymin * sy,
            xmax: self.xmax * sx,
            ymax: self.ymax * sy,
        }
    }

    /// Clamp to an image of the given size. Returns None when the box does
    /// not intersect the image at all.
    pub fn clamped(&self, width: f64, height: f64) -> Option<Self> {
        let xmin = self.xmin.max(0.0);
        let ymin = self.ymin.max(0.0);
        let xmax = self.xmax.min(width);
        let ymax = self.ymax.min(height);
        if xmin < xmax && ymin < ymax {
            Some(Self {
                xmin,
                ymin,
                xmax,
                ymax,
            })
        } else {
            None
        }
    }

    pub fn intersection_area(&self, other: &Self) -> f64 {
        let w = (self.xmax.min(other.xmax) - self.xmin.max(other.xmin)).max(0.0);
        let h = (self.ymax.min(other.ymax) - self.ymin.max(other.ymin)).max(0.0);
        w * h
    }
}

/// Intersection over union of two boxes, over continuous area. Always in
/// `[0, 1]` for valid boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> BoundingBox {
        BoundingBox::new(xmin, ymin, xmax, ymax).unwrap()
    }

    /// Independent oracle: count integer unit cells inside each box on the
    /// pixel grid. Only valid for integer-coordinate boxes.
    pub(crate) fn iou_unit_cell_oracle(a: &BoundingBox, b: &BoundingBox) -> f64 {
        let x0 = a.xmin.min(b.xmin) as i64;
        let x1 = a.xmax.max(b.xmax) as i64;
        let y0 = a.ymin.min(b.ymin) as i64;
        let y1 = a.ymax.max(b.ymax) as i64;
        let inside = |bx: &BoundingBox, cx: i64, cy: i64| {
            (cx as f64) >= bx.xmin
                && ((cx + 1) as f64) <= bx.xmax
                && (cy as f64) >= bx.ymin
                && ((cy + 1) as f64) <= bx.ymax
        };
        let mut in_a = 0u64;
        let mut in_b = 0u64;
        let mut in_both = 0u64;
        for cy in y0..y1 {
            for cx in x0..x1 {
                let ia = inside(a, cx, cy);
                let ib = inside(b, cx, cy);
                in_a += ia as u64;
                in_b += ib as u64;
                in_both += (ia && ib) as u64;
            }
        }
        let union = in_a + in_b - in_both;
        if union == 0 {
            0.0
        } else {
            in_both as f64 / union as f64
        }
    }

    #[test]
    fn identical_boxes_iou_one() {
        let a = bb(3.0, 4.0, 10.0, 12.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn disjoint_boxes_iou_zero() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        let b = bb(20.0, 20.0, 30.0, 30.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn quarter_overlap() {
        // 5x5 overlap, union 100 + 100 - 25 = 175.
        let a = bb(0.0, 0.0, 10.0, 10.0);
        let b = bb(5.0, 5.0, 15.0, 15.0);
        let expected = 25.0 / 175.0;
        assert!((iou(&a, &b) - expected).abs() < 1e-12);
        assert!((iou_unit_cell_oracle(&a, &b) - expected).abs() < 1e-12);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(BoundingBox::new(5.0, 0.0, 5.0, 10.0).is_err());
        assert!(BoundingBox::new(6.0, 0.0, 5.0, 10.0).is_err());
        assert!(BoundingBox::new(0.0, f64::NAN, 5.0, 10.0).is_err());
    }

    #[test]
    fn clamp_to_image() {
        let b = bb(-10.0, -10.0, 20.0, 20.0);
        let c = b.clamped(100.0, 100.0).unwrap();
        assert_eq!(c, bb(0.0, 0.0, 20.0, 20.0));
        assert!(bb(200.0, 200.0, 300.0, 300.0).clamped(100.0, 100.0).is_none());
    }
}
