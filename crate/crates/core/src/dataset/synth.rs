//! Seeded synthetic dataset generator.
//!
//! Produces 11 visually distinct "egg" classes: tinted ellipses with
//! class-specific color, elongation, and texture (plain, striped, dotted,
//! or dark-rimmed), placed at a random pose on a noisy background. Ground
//! truth is the exact axis-aligned bounding box of the rotated ellipse.
//!
//! Everything is derived from the seed, so two runs with the same
//! configuration produce byte-identical datasets.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{rngs::StdRng, Rng, SeedableRng};

use crate::categories::{CategoryId, NUM_CATEGORIES};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

use super::AnnotatedImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub image_size: u32,
    pub per_class_count: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            per_class_count: 10,
            noise_sigma: 8.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 64 {
            return Err(Error::Config(format!(
                "image_size {} too small, need at least 64",
                self.image_size
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "noise_sigma {} must be non-negative",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// Parse the plain-text key-value generator config:
    ///
    /// ```text
    /// image_size = 256
    /// per_class_count = 10
    /// noise_sigma = 8.0
    /// seed = 42
    /// ```
    ///
    /// Missing keys keep their defaults; unknown keys are rejected.
    pub fn from_kv_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let parse_err =
                |e: &dyn std::fmt::Display| Error::Config(format!("bad value for {key}: {e}"));
            match key {
                "image_size" => config.image_size = value.parse().map_err(|e| parse_err(&e))?,
                "per_class_count" => {
                    config.per_class_count = value.parse().map_err(|e| parse_err(&e))?
                }
                "noise_sigma" => config.noise_sigma = value.parse().map_err(|e| parse_err(&e))?,
                "seed" => config.seed = value.parse().map_err(|e| parse_err(&e))?,
                other => {
                    return Err(Error::Config(format!(
                        "unknown generator config key: {other}"
                    )))
                }
            }
        }
        config.validate()?;
        Ok(config)
    }
}

const BACKGROUND: [f64; 3] = [219.0, 214.0, 203.0];

/// Base tint per class, chosen to be mutually distinguishable.
const CLASS_COLORS: [[f64; 3]; NUM_CATEGORIES] = [
    [172.0, 62.0, 50.0],
    [62.0, 132.0, 58.0],
    [58.0, 84.0, 176.0],
    [184.0, 152.0, 42.0],
    [142.0, 60.0, 162.0],
    [46.0, 152.0, 150.0],
    [204.0, 112.0, 38.0],
    [118.0, 88.0, 56.0],
    [204.0, 72.0, 134.0],
    [44.0, 58.0, 92.0],
    [152.0, 182.0, 58.0],
];

/// Major/minor axis ratio per class.
const CLASS_ASPECTS: [f64; NUM_CATEGORIES] =
    [1.2, 1.9, 1.5, 1.05, 1.7, 1.3, 2.1, 1.45, 1.0, 1.6, 2.3];

#[derive(Clone, Copy)]
enum Texture {
    Plain,
    Stripes,
    Dots,
    Rim,
}

fn class_texture(class: usize) -> Texture {
    match class % 4 {
        0 => Texture::Plain,
        1 => Texture::Stripes,
        2 => Texture::Dots,
        _ => Texture::Rim,
    }
}

fn mix_seed(seed: u64, class: u64, index: u64) -> u64 {
    // splitmix64 over the tuple; stable across platforms.
    let mut z = seed
        .wrapping_add(class.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// One standard normal sample via Box-Muller.
fn gaussian(rng: &mut StdRng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generate `11 * per_class_count` annotated images, one egg per image.
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<Vec<AnnotatedImage>> {
    config.validate()?;
    let mut out = Vec::with_capacity(NUM_CATEGORIES * config.per_class_count);
    for class in 0..NUM_CATEGORIES {
        for index in 0..config.per_class_count {
            let mut rng = StdRng::seed_from_u64(mix_seed(seed, class as u64, index as u64));
            out.push(generate_one(config, class, index, &mut rng)?);
        }
    }
    Ok(out)
}

fn generate_one(
    config: &SynthConfig,
    class: usize,
    index: usize,
    rng: &mut StdRng,
) -> Result<AnnotatedImage> {
    let size = config.image_size as f64;

    let a = size * rng.random_range(0.17..0.26);
    let aspect = CLASS_ASPECTS[class] * rng.random_range(0.92..1.08);
    let b = a / aspect;
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (sin_t, cos_t) = theta.sin_cos();
    let half_x = (a * a * cos_t * cos_t + b * b * sin_t * sin_t).sqrt();
    let half_y = (a * a * sin_t * sin_t + b * b * cos_t * cos_t).sqrt();
    let margin = 4.0;
    let cx = rng.random_range(half_x + margin..size - half_x - margin);
    let cy = rng.random_range(half_y + margin..size - half_y - margin);

    let color = CLASS_COLORS[class];
    let texture = class_texture(class);
    let stripe_period = a / 3.5;
    let dot_du = a / 2.5;
    let dot_dv = b / 2.5;
    let dot_radius = dot_du.min(dot_dv) * 0.34;

    let mut pixels = RgbImage::new(config.image_size, config.image_size);
    for y in 0..config.image_size {
        for x in 0..config.image_size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let u = dx * cos_t + dy * sin_t;
            let v = -dx * sin_t + dy * cos_t;
            let rho2 = (u / a).powi(2) + (v / b).powi(2);

            let base = if rho2 <= 1.0 {
                let mut shade = 1.0 - 0.22 * rho2;
                match texture {
                    Texture::Plain => {}
                    Texture::Stripes => {
                        if (u / stripe_period).floor() as i64 % 2 == 0 {
                            shade *= 0.62;
                        }
                    }
                    Texture::Dots => {
                        let gu = u - (u / dot_du).round() * dot_du;
                        let gv = v - (v / dot_dv).round() * dot_dv;
                        if (gu * gu + gv * gv).sqrt() < dot_radius {
                            shade *= 0.5;
                        }
                    }
                    Texture::Rim => {
                        if rho2 > 0.6 {
                            shade *= 0.55;
                        }
                    }
                }
                [color[0] * shade, color[1] * shade, color[2] * shade]
            } else {
                BACKGROUND
            };

            let mut px = [0u8; 3];
            for c in 0..3 {
                let noisy = base[c] + config.noise_sigma * gaussian(rng);
                px[c] = noisy.round().clamp(0.0, 255.0) as u8;
            }
            pixels.put_pixel(x, y, Rgb(px));
        }
    }

    let bbox = BoundingBox::new(cx - half_x, cy - half_y, cx + half_x, cy + half_y)?;
    Ok(AnnotatedImage {
        image_id: format!("synth_c{class:02}_{index:04}"),
        pixels,
        annotations: vec![(bbox, CategoryId::new(class)?)],
    })
}
