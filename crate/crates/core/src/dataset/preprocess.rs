//! Geometry-preserving preprocessing for the two pipeline stages.
//!
//! Both stages consume square, channel-normalized float images; the
//! detector at 512 and the crop classifier at 600. A [`NormalizedImage`]
//! remembers the per-axis scale back to original pixels so detections can
//! be reported in the source coordinate frame.

use image::{imageops, imageops::FilterType, RgbImage};

use crate::categories::CategoryId;
pub use crate::config::{CLASSIFIER_INPUT_SIDE, DETECTOR_INPUT_SIDE};
use crate::config::{IMAGENET_MEAN, IMAGENET_STD};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

use super::AnnotatedImage;

/// A square, normalized float image in planar channel layout, plus the
/// ratios mapping its coordinates back to original pixels.
#[derive(Debug, Clone)]
pub struct NormalizedImage {
    side: usize,
    /// Planar layout: channel `c` occupies `c*side*side .. (c+1)*side*side`.
    pixels: Vec<f32>,
    /// `original_width / side`: multiply a normalized x to recover pixels.
    pub scale_x: f64,
    /// `original_height / side`.
    pub scale_y: f64,
}

impl NormalizedImage {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> f32 {
        self.pixels[channel * self.side * self.side + y * self.side + x]
    }

    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.side * self.side;
        &self.pixels[channel * n..(channel + 1) * n]
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Map a box in this image's frame back to original pixel coordinates.
    pub fn box_to_original(&self, b: &BoundingBox) -> BoundingBox {
        b.scaled(self.scale_x, self.scale_y)
    }
}

/// Detector-ready image plus its ground-truth boxes rescaled into the
/// normalized frame.
#[derive(Debug, Clone)]
pub struct DetectorInput {
    pub image: NormalizedImage,
    pub boxes: Vec<(BoundingBox, CategoryId)>,
}

fn resize_and_normalize(pixels: &RgbImage, side: u32) -> Result<NormalizedImage> {
    let (w, h) = pixels.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Contract("empty image".to_string()));
    }
    let resized = if (w, h) == (side, side) {
        pixels.clone()
    } else {
        imageops::resize(pixels, side, side, FilterType::Triangle)
    };
    let s = side as usize;
    let mut planar = vec![0.0f32; 3 * s * s];
    for (x, y, px) in resized.enumerate_pixels() {
        let base = y as usize * s + x as usize;
        for c in 0..3 {
            planar[c * s * s + base] = (px[c] as f32 / 255.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
        }
    }
    Ok(NormalizedImage {
        side: s,
        pixels: planar,
        scale_x: w as f64 / side as f64,
        scale_y: h as f64 / side as f64,
    })
}

/// Resize to the detector's input side, normalize channels, and rescale
/// the ground-truth boxes into the normalized frame.
pub fn preprocess_for_detector(img: &AnnotatedImage, side: u32) -> Result<DetectorInput> {
    let image = resize_and_normalize(&img.pixels, side)?;
    let sx = 1.0 / image.scale_x;
    let sy = 1.0 / image.scale_y;
    let boxes = img
        .annotations
        .iter()
        .map(|(b, c)| (b.scaled(sx, sy), *c))
        .collect();
    Ok(DetectorInput { image, boxes })
}

/// Resize a crop to the classifier's input side and normalize channels.
pub fn preprocess_for_classifier(crop: &RgbImage) -> Result<NormalizedImage> {
    resize_and_normalize(crop, CLASSIFIER_INPUT_SIDE)
}

/// Extract the pixel region covered by `bbox`, clamped to image bounds.
/// The region is expanded outward to whole pixels; no padding is added
/// beyond the image. Fails when the box lies fully outside the image.
pub fn crop_box(img: &AnnotatedImage, bbox: &BoundingBox) -> Result<RgbImage> {
    bbox.validate()?;
    let (w, h) = (img.width() as f64, img.height() as f64);
    let clamped = bbox.clamped(w, h).ok_or_else(|| {
        Error::Contract(format!(
            "box ({}, {}, {}, {}) does not intersect a {}x{} image",
            bbox.xmin,
            bbox.ymin,
            bbox.xmax,
            bbox.ymax,
            img.width(),
            img.height()
        ))
    })?;
    let x0 = clamped.xmin.floor() as u32;
    let y0 = clamped.ymin.floor() as u32;
    let x1 = (clamped.xmax.ceil() as u32).min(img.width());
    let y1 = (clamped.ymax.ceil() as u32).min(img.height());
    let (cw, ch) = (x1 - x0, y1 - y0);
    let mut crop = RgbImage::new(cw, ch);
    for y in 0..ch {
        for x in 0..cw {
            crop.put_pixel(x, y, *img.pixels.get_pixel(x0 + x, y0 + y));
        }
    }
    Ok(crop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn solid_image(w: u32, h: u32, rgb: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb(rgb))
    }

    fn annotated(pixels: RgbImage, boxes: Vec<(f64, f64, f64, f64)>) -> AnnotatedImage {
        AnnotatedImage {
            image_id: "t".to_string(),
            pixels,
            annotations: boxes
                .into_iter()
                .map(|(a, b, c, d)| {
                    (
                        BoundingBox::new(a, b, c, d).unwrap(),
                        CategoryId::new(0).unwrap(),
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn full_frame_box_scales_to_full_frame() {
        let img = annotated(solid_image(1024, 1024, [10, 20, 30]), vec![(0.0, 0.0, 1024.0, 1024.0)]);
        let input = preprocess_for_detector(&img, 512).unwrap();
        let (b, _) = input.boxes[0];
        assert_eq!((b.xmin, b.ymin, b.xmax, b.ymax), (0.0, 0.0, 512.0, 512.0));
        assert_eq!(input.image.scale_x, 2.0);
        assert_eq!(input.image.scale_y, 2.0);
    }

    #[test]
    fn per_axis_scaling() {
        let img = annotated(solid_image(1024, 512, [0, 0, 0]), vec![(512.0, 0.0, 1024.0, 512.0)]);
        let input = preprocess_for_detector(&img, 512).unwrap();
        let (b, _) = input.boxes[0];
        assert_eq!((b.xmin, b.ymin, b.xmax, b.ymax), (256.0, 0.0, 512.0, 512.0));
    }

    #[test]
    fn constant_zero_image_normalizes_to_minus_mean_over_std() {
        let img = annotated(solid_image(512, 512, [0, 0, 0]), vec![]);
        let input = preprocess_for_detector(&img, 512).unwrap();
        for c in 0..3 {
            let expected = -IMAGENET_MEAN[c] / IMAGENET_STD[c];
            assert!((input.image.get(c, 100, 200) - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn box_round_trip_within_half_pixel() {
        let img = annotated(solid_image(777, 333, [5, 5, 5]), vec![(12.0, 34.0, 567.0, 321.0)]);
        let input = preprocess_for_detector(&img, 512).unwrap();
        let (scaled, _) = input.boxes[0];
        let back = input.image.box_to_original(&scaled);
        let (orig, _) = img.annotations[0];
        for (a, b) in [
            (back.xmin, orig.xmin),
            (back.ymin, orig.ymin),
            (back.xmax, orig.xmax),
            (back.ymax, orig.ymax),
        ] {
            assert!((a - b).abs() < 0.5);
        }
    }

    #[test]
    fn crop_full_image_is_identity() {
        let mut pixels = solid_image(16, 12, [1, 2, 3]);
        pixels.put_pixel(5, 7, Rgb([200, 100, 50]));
        let img = annotated(pixels.clone(), vec![]);
        let crop = crop_box(&img, &BoundingBox::new(0.0, 0.0, 16.0, 12.0).unwrap()).unwrap();
        assert_eq!(crop, pixels);
    }

    #[test]
    fn crop_clamps_to_bounds() {
        let img = annotated(solid_image(100, 100, [9, 9, 9]), vec![]);
        let crop = crop_box(&img, &BoundingBox::new(-10.0, -10.0, 20.0, 20.0).unwrap()).unwrap();
        assert_eq!((crop.width(), crop.height()), (20, 20));
    }

    #[test]
    fn crop_origin_matches_source_pixel() {
        let mut pixels = solid_image(100, 100, [0, 0, 0]);
        pixels.put_pixel(10, 20, Rgb([123, 45, 67]));
        let img = annotated(pixels, vec![]);
        let crop = crop_box(&img, &BoundingBox::new(10.0, 20.0, 50.0, 60.0).unwrap()).unwrap();
        assert_eq!((crop.width(), crop.height()), (40, 40));
        assert_eq!(*crop.get_pixel(0, 0), Rgb([123, 45, 67]));
    }

    #[test]
    fn crop_fully_outside_is_error() {
        let img = annotated(solid_image(50, 50, [0, 0, 0]), vec![]);
        assert!(crop_box(&img, &BoundingBox::new(60.0, 60.0, 80.0, 80.0).unwrap()).is_err());
    }

    #[test]
    fn classifier_preprocess_sides() {
        let crop = solid_image(600, 600, [50, 60, 70]);
        let n = preprocess_for_classifier(&crop).unwrap();
        assert_eq!(n.side(), 600);
        assert_eq!(n.scale_x, 1.0);

        let crop = solid_image(300, 300, [50, 60, 70]);
        let n = preprocess_for_classifier(&crop).unwrap();
        assert_eq!(n.side(), 600);
        assert_eq!(n.scale_x, 0.5);

        let crop = solid_image(1, 1, [255, 0, 0]);
        let n = preprocess_for_classifier(&crop).unwrap();
        assert_eq!(n.side(), 600);
        // Degenerate upscale of a single pixel is constant.
        let v = n.get(0, 0, 0);
        assert!((n.get(0, 599, 599) - v).abs() < 1e-6);
        assert!((n.get(0, 300, 300) - v).abs() < 1e-6);
    }
}
