//! The `tiny-ref` detector backend: a small single-scale, anchor-free CNN
//! used for desk-scale runs and tests.
//!
//! The normalized input is average-pooled down to 64x64, pushed through
//! three conv/pool stages, and a 1x1 head predicts, per cell of an 8x8
//! grid: an objectness logit, four box logits (sigmoid-bounded center
//! offset within the cell and width/height as a fraction of the image),
//! and 11 class logits. Training is seeded SGD-free Adam on a composite
//! objectness/box/class loss; everything is single-threaded f32, so runs
//! are bit-reproducible.

use rand::seq::SliceRandom;
use rand::{rngs::StdRng, SeedableRng};

use crate::categories::NUM_CATEGORIES;
use crate::dataset::{preprocess_for_detector, AnnotatedImage, NormalizedImage};
use crate::error::{Error, Result};
use crate::fusion::ClassScores;
use crate::geometry::BoundingBox;
use crate::nn::{
    avgpool, bce_with_logits, bytes_to_f32s, f32s_to_bytes, maxpool2, maxpool2_backward, relu,
    relu_backward, sigmoid, softmax_ce, softmax_f64, Adam, Conv2d,
};

use super::backend::{DetectorBackend, RawDetection};
use super::{DetectorConfig, EpochStats};

const WORK_SIDE: usize = 64;
const GRID: usize = 8;
const CELLS: usize = GRID * GRID;
const C1: usize = 12;
const C2: usize = 24;
const C3: usize = 32;
/// Head channels: objectness, tx, ty, tw, th, then one logit per class.
const HEAD_C: usize = 5 + NUM_CATEGORIES;

/// Cells below this objectness never become candidates. Low on purpose:
/// candidate scores are objectness-weighted, so weak cells score near
/// uniform and fall to the confidence filter.
const OBJ_GATE: f32 = 0.1;
const POS_WEIGHT: f32 = 8.0;
const BOX_WEIGHT: f32 = 5.0;
/// Step-decay factor applied to the learning rate for the final third of
/// the epochs; tightens box regression once objectness has settled.
const LATE_LR_FACTOR: f64 = 0.25;

pub(crate) struct TinyDetector {
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    head: Conv2d,
    trained: bool,
}

struct CellTarget {
    cell: usize,
    tx: f32,
    ty: f32,
    tw: f32,
    th: f32,
    class: usize,
}

struct Sample {
    x: Vec<f32>,
    targets: Vec<CellTarget>,
}

struct Trace {
    a1: Vec<f32>,
    i1: Vec<u32>,
    p1: Vec<f32>,
    a2: Vec<f32>,
    i2: Vec<u32>,
    p2: Vec<f32>,
    a3: Vec<f32>,
    i3: Vec<u32>,
    p3: Vec<f32>,
    out: Vec<f32>,
}

impl TinyDetector {
    pub fn new() -> Self {
        // Placeholder weights; real initialization happens in train() from
        // the run seed, or via import_weights() when loading a checkpoint.
        let mut rng = StdRng::seed_from_u64(0);
        Self {
            conv1: Conv2d::new(3, C1, 3, &mut rng),
            conv2: Conv2d::new(C1, C2, 3, &mut rng),
            conv3: Conv2d::new(C2, C3, 3, &mut rng),
            head: Conv2d::new(C3, HEAD_C, 1, &mut rng),
            trained: false,
        }
    }

    fn init(&mut self, rng: &mut StdRng) {
        self.conv1 = Conv2d::new(3, C1, 3, rng);
        self.conv2 = Conv2d::new(C1, C2, 3, rng);
        self.conv3 = Conv2d::new(C2, C3, 3, rng);
        self.head = Conv2d::new(C3, HEAD_C, 1, rng);
    }

    fn param_count(&self) -> usize {
        self.conv1.param_count()
            + self.conv2.param_count()
            + self.conv3.param_count()
            + self.head.param_count()
    }

    fn export_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in [&self.conv1, &self.conv2, &self.conv3, &self.head] {
            out.extend_from_slice(&layer.weight);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    fn import_params(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Schema(format!(
                "weight vector has {} values, expected {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for layer in [
            &mut self.conv1,
            &mut self.conv2,
            &mut self.conv3,
            &mut self.head,
        ] {
            let wl = layer.weight.len();
            layer.weight.copy_from_slice(&flat[at..at + wl]);
            at += wl;
            let bl = layer.bias.len();
            layer.bias.copy_from_slice(&flat[at..at + bl]);
            at += bl;
        }
        Ok(())
    }

    fn forward(&self, x: &[f32]) -> Trace {
        let mut a1 = self.conv1.forward(x, WORK_SIDE, WORK_SIDE);
        relu(&mut a1);
        let (p1, i1) = maxpool2(&a1, C1, WORK_SIDE, WORK_SIDE);
        let mut a2 = self.conv2.forward(&p1, WORK_SIDE / 2, WORK_SIDE / 2);
        relu(&mut a2);
        let (p2, i2) = maxpool2(&a2, C2, WORK_SIDE / 2, WORK_SIDE / 2);
        let mut a3 = self.conv3.forward(&p2, WORK_SIDE / 4, WORK_SIDE / 4);
        relu(&mut a3);
        let (p3, i3) = maxpool2(&a3, C3, WORK_SIDE / 4, WORK_SIDE / 4);
        let out = self.head.forward(&p3, GRID, GRID);
        Trace {
            a1,
            i1,
            p1,
            a2,
            i2,
            p2,
            a3,
            i3,
            p3,
            out,
        }
    }

    /// Loss and head-output gradient for one sample.
    fn loss_and_head_grad(out: &[f32], targets: &[CellTarget]) -> (f64, Vec<f32>) {
        let mut grad = vec![0.0f32; out.len()];
        let mut positive = vec![false; CELLS];
        for t in targets {
            positive[t.cell] = true;
        }

        let mut obj_loss = 0.0f64;
        for cell in 0..CELLS {
            let target = if positive[cell] { 1.0 } else { 0.0 };
            let weight = if positive[cell] { POS_WEIGHT } else { 1.0 };
            let (l, g) = bce_with_logits(out[cell], target, weight);
            obj_loss += l;
            grad[cell] = g / CELLS as f32;
        }
        obj_loss /= CELLS as f64;

        let mut box_loss = 0.0f64;
        let mut cls_loss = 0.0f64;
        if !targets.is_empty() {
            let n_pos = targets.len() as f32;
            for t in targets {
                for (chan, target) in [(1, t.tx), (2, t.ty), (3, t.tw), (4, t.th)] {
                    let at = chan * CELLS + t.cell;
                    let p = sigmoid(out[at]);
                    let diff = p - target;
                    box_loss += (BOX_WEIGHT * diff * diff) as f64;
                    grad[at] += BOX_WEIGHT * 2.0 * diff * p * (1.0 - p) / n_pos;
                }
                let logits: Vec<f32> =
                    (0..NUM_CATEGORIES).map(|k| out[(5 + k) * CELLS + t.cell]).collect();
                let (l, g) = softmax_ce(&logits, t.class);
                cls_loss += l;
                for (k, gk) in g.iter().enumerate() {
                    grad[(5 + k) * CELLS + t.cell] += gk / n_pos;
                }
            }
            box_loss /= n_pos as f64;
            cls_loss /= n_pos as f64;
        }

        (obj_loss + box_loss + cls_loss, grad)
    }

    /// Full backward pass; returns the flat parameter gradient.
    fn backward(&self, x: &[f32], trace: &Trace, head_grad: &[f32]) -> Vec<f32> {
        let (g_p3, gw_h, gb_h) = self.head.backward(&trace.p3, head_grad, GRID, GRID);
        let mut g_a3 = maxpool2_backward(&g_p3, &trace.i3, C3, WORK_SIDE / 4, WORK_SIDE / 4);
        relu_backward(&mut g_a3, &trace.a3);
        let (g_p2, gw3, gb3) = self
            .conv3
            .backward(&trace.p2, &g_a3, WORK_SIDE / 4, WORK_SIDE / 4);
        let mut g_a2 = maxpool2_backward(&g_p2, &trace.i2, C2, WORK_SIDE / 2, WORK_SIDE / 2);
        relu_backward(&mut g_a2, &trace.a2);
        let (g_p1, gw2, gb2) = self
            .conv2
            .backward(&trace.p1, &g_a2, WORK_SIDE / 2, WORK_SIDE / 2);
        let mut g_a1 = maxpool2_backward(&g_p1, &trace.i1, C1, WORK_SIDE, WORK_SIDE);
        relu_backward(&mut g_a1, &trace.a1);
        let (_, gw1, gb1) = self.conv1.backward(x, &g_a1, WORK_SIDE, WORK_SIDE);

        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in [(gw1, gb1), (gw2, gb2), (gw3, gb3), (gw_h, gb_h)] {
            flat.extend_from_slice(&w);
            flat.extend_from_slice(&b);
        }
        flat
    }

    fn prepare(&self, images: &[AnnotatedImage], config: &DetectorConfig) -> Result<Vec<Sample>> {
        let side = config.input_side as usize;
        let factor = side / WORK_SIDE;
        let cell_px = side as f32 / GRID as f32;
        images
            .iter()
            .map(|img| {
                let input = preprocess_for_detector(img, config.input_side)?;
                let x = avgpool(input.image.pixels(), 3, side, side, factor);
                let targets = input
                    .boxes
                    .iter()
                    .map(|(b, category)| {
                        let cx = (b.xmin + b.xmax) as f32 / 2.0;
                        let cy = (b.ymin + b.ymax) as f32 / 2.0;
                        let gx = ((cx / cell_px) as usize).min(GRID - 1);
                        let gy = ((cy / cell_px) as usize).min(GRID - 1);
                        CellTarget {
                            cell: gy * GRID + gx,
                            tx: (cx / cell_px - gx as f32).clamp(0.0, 1.0),
                            ty: (cy / cell_px - gy as f32).clamp(0.0, 1.0),
                            tw: (b.width() as f32 / side as f32).clamp(0.0, 1.0),
                            th: (b.height() as f32 / side as f32).clamp(0.0, 1.0),
                            class: category.index(),
                        }
                    })
                    .collect();
                Ok(Sample { x, targets })
            })
            .collect()
    }

    fn mean_loss(&self, samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let total: f64 = samples
            .iter()
            .map(|s| Self::loss_and_head_grad(&self.forward(&s.x).out, &s.targets).0)
            .sum();
        total / samples.len() as f64
    }
}

impl DetectorBackend for TinyDetector {
    fn id(&self) -> &'static str {
        "tiny-ref"
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn train(
        &mut self,
        train: &[AnnotatedImage],
        val: &[AnnotatedImage],
        config: &DetectorConfig,
        seed: u64,
    ) -> Result<Vec<EpochStats>> {
        if config.input_side as usize % WORK_SIDE != 0 {
            return Err(Error::Capability(format!(
                "tiny-ref requires input_side to be a multiple of {WORK_SIDE}, got {}",
                config.input_side
            )));
        }
        let mut rng = StdRng::seed_from_u64(seed);
        self.init(&mut rng);

        let train_samples = self.prepare(train, config)?;
        let val_samples = self.prepare(val, config)?;

        let mut adam = Adam::new(self.param_count());
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        let mut log = Vec::with_capacity(config.epochs);

        for epoch in 0..config.epochs {
            let lr = if epoch >= config.epochs * 2 / 3 {
                config.learning_rate * LATE_LR_FACTOR
            } else {
                config.learning_rate
            } as f32;
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0f64;
            for chunk in order.chunks(config.batch_size) {
                let mut grads = vec![0.0f32; self.param_count()];
                for &idx in chunk {
                    let sample = &train_samples[idx];
                    let trace = self.forward(&sample.x);
                    let (loss, head_grad) = Self::loss_and_head_grad(&trace.out, &sample.targets);
                    epoch_loss += loss;
                    let flat = self.backward(&sample.x, &trace, &head_grad);
                    for (acc, g) in grads.iter_mut().zip(&flat) {
                        *acc += g;
                    }
                }
                let scale = 1.0 / chunk.len() as f32;
                for g in &mut grads {
                    *g *= scale;
                }
                let mut params = self.export_params();
                adam.step(&mut params, &grads, lr);
                self.import_params(&params)?;
            }
            let train_loss = epoch_loss / train_samples.len().max(1) as f64;
            let val_loss = if val_samples.is_empty() {
                None
            } else {
                Some(self.mean_loss(&val_samples))
            };
            log.push(EpochStats {
                epoch: epoch + 1,
                train_loss,
                val_loss,
            });
        }

        self.trained = true;
        Ok(log)
    }

    fn infer(&self, image: &NormalizedImage) -> Vec<RawDetection> {
        let side = image.side();
        if !self.trained || side % WORK_SIDE != 0 {
            return Vec::new();
        }
        let x = avgpool(image.pixels(), 3, side, side, side / WORK_SIDE);
        let out = self.forward(&x).out;
        let cell_px = side as f64 / GRID as f64;

        let mut raw = Vec::new();
        for gy in 0..GRID {
            for gx in 0..GRID {
                let cell = gy * GRID + gx;
                let obj = sigmoid(out[cell]) as f64;
                if obj < OBJ_GATE as f64 {
                    continue;
                }
                let cx = (gx as f64 + sigmoid(out[CELLS + cell]) as f64) * cell_px;
                let cy = (gy as f64 + sigmoid(out[2 * CELLS + cell]) as f64) * cell_px;
                let w = sigmoid(out[3 * CELLS + cell]) as f64 * side as f64;
                let h = sigmoid(out[4 * CELLS + cell]) as f64 * side as f64;
                let bbox = BoundingBox {
                    xmin: cx - w / 2.0,
                    ymin: cy - h / 2.0,
                    xmax: cx + w / 2.0,
                    ymax: cy + h / 2.0,
                };
                let Some(bbox) = bbox.clamped(side as f64, side as f64) else {
                    continue;
                };
                if bbox.width() < 1.0 || bbox.height() < 1.0 {
                    continue;
                }
                let logits: Vec<f32> =
                    (0..NUM_CATEGORIES).map(|k| out[(5 + k) * CELLS + cell]).collect();
                let probs = softmax_f64(&logits);
                // Blend the class posterior with uniform by objectness:
                // given "no egg here", the class is uninformative. Keeps
                // the simplex invariant while making max(scores) reflect
                // presence, so the confidence filter drops weak cells.
                let uniform = 1.0 / NUM_CATEGORIES as f64;
                let mut values = [0.0f64; NUM_CATEGORIES];
                for (v, p) in values.iter_mut().zip(&probs) {
                    *v = obj * p + (1.0 - obj) * uniform;
                }
                let Ok(scores) = ClassScores::new(values) else {
                    continue;
                };
                raw.push(RawDetection { bbox, scores });
            }
        }
        raw
    }

    fn export_weights(&self) -> Vec<u8> {
        f32s_to_bytes(&self.export_params())
    }

    fn import_weights(&mut self, bytes: &[u8]) -> Result<()> {
        let flat = bytes_to_f32s(bytes, self.param_count())?;
        self.import_params(&flat)?;
        self.trained = true;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthConfig};

    fn desk_config() -> DetectorConfig {
        DetectorConfig {
            input_side: 64,
            epochs: 3,
            batch_size: 4,
            learning_rate: 2e-3,
            ..Default::default()
        }
    }

    fn tiny_dataset(per_class: usize, seed: u64) -> Vec<AnnotatedImage> {
        synth_generate(
            &SynthConfig {
                image_size: 96,
                per_class_count: per_class,
                noise_sigma: 4.0,
                seed,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn training_reduces_loss() {
        let data = tiny_dataset(2, 5);
        let mut backend = TinyDetector::new();
        let log = backend.train(&data, &[], &desk_config(), 11).unwrap();
        assert_eq!(log.len(), 3);
        assert!(log.last().unwrap().train_loss < log[0].train_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_dataset(1, 5);
        let mut a = TinyDetector::new();
        let mut b = TinyDetector::new();
        let log_a = a.train(&data, &[], &desk_config(), 11).unwrap();
        let log_b = b.train(&data, &[], &desk_config(), 11).unwrap();
        for (x, y) in log_a.iter().zip(&log_b) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        }
        assert_eq!(a.export_weights(), b.export_weights());
    }

    #[test]
    fn weights_round_trip_bitwise() {
        let data = tiny_dataset(1, 3);
        let mut backend = TinyDetector::new();
        backend.train(&data, &[], &desk_config(), 1).unwrap();
        let blob = backend.export_weights();
        let mut fresh = TinyDetector::new();
        fresh.import_weights(&blob).unwrap();
        assert_eq!(fresh.export_weights(), blob);
        assert!(fresh.import_weights(&blob[..blob.len() - 4]).is_err());
    }

    #[test]
    fn bad_input_side_is_capability_error() {
        let data = tiny_dataset(1, 3);
        let mut backend = TinyDetector::new();
        let config = DetectorConfig {
            input_side: 100,
            ..desk_config()
        };
        assert!(matches!(
            backend.train(&data, &[], &config, 1),
            Err(Error::Capability(_))
        ));
    }
}
