//! Minimal convolutional network primitives for the reference backends.
//!
//! Plain `Vec<f32>` tensors in planar CHW layout, direct (im2col-free)
//! convolutions, and a hand-rolled Adam. Everything is single-threaded and
//! seeded, so training and inference are bit-reproducible. This is
//! deliberately small: the reference backends that use it run desk-scale
//! workloads on a CPU.

use rand::{rngs::StdRng, Rng};

use crate::error::{Error, Result};

/// 2D convolution, stride 1, square kernel, zero padding `k/2` so spatial
/// dimensions are preserved.
#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub pad: usize,
    /// `[out_c][in_c][k][k]`, flattened.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, k: usize, rng: &mut StdRng) -> Self {
        let fan_in = (in_c * k * k) as f32;
        let limit = (6.0 / fan_in).sqrt();
        let weight = (0..out_c * in_c * k * k)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            in_c,
            out_c,
            k,
            pad: k / 2,
            weight,
            bias: vec![0.0; out_c],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, input: &[f32], h: usize, w: usize) -> Vec<f32> {
        debug_assert_eq!(input.len(), self.in_c * h * w);
        let mut out = vec![0.0f32; self.out_c * h * w];
        for oc in 0..self.out_c {
            let plane = &mut out[oc * h * w..(oc + 1) * h * w];
            plane.fill(self.bias[oc]);
            for ic in 0..self.in_c {
                let in_plane = &input[ic * h * w..(ic + 1) * h * w];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let wv = self.weight
                            [((oc * self.in_c + ic) * self.k + ky) * self.k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let dy = ky as isize - self.pad as isize;
                        let dx = kx as isize - self.pad as isize;
                        let y0 = (-dy).max(0) as usize;
                        let y1 = ((h as isize - dy).min(h as isize)) as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = ((w as isize - dx).min(w as isize)) as usize;
                        for y in y0..y1 {
                            let in_row = ((y as isize + dy) as usize) * w;
                            let out_row = y * w;
                            for x in x0..x1 {
                                plane[out_row + x] +=
                                    wv * in_plane[in_row + (x as isize + dx) as usize];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Backward pass. Returns (grad_input, grad_weight, grad_bias).
    pub fn backward(
        &self,
        input: &[f32],
        grad_out: &[f32],
        h: usize,
        w: usize,
    ) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let mut grad_in = vec![0.0f32; self.in_c * h * w];
        let mut grad_w = vec![0.0f32; self.weight.len()];
        let mut grad_b = vec![0.0f32; self.out_c];
        for oc in 0..self.out_c {
            let g_plane = &grad_out[oc * h * w..(oc + 1) * h * w];
            grad_b[oc] = g_plane.iter().sum();
            for ic in 0..self.in_c {
                let in_plane = &input[ic * h * w..(ic + 1) * h * w];
                let gi_plane = &mut grad_in[ic * h * w..(ic + 1) * h * w];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let widx = ((oc * self.in_c + ic) * self.k + ky) * self.k + kx;
                        let wv = self.weight[widx];
                        let dy = ky as isize - self.pad as isize;
                        let dx = kx as isize - self.pad as isize;
                        let y0 = (-dy).max(0) as usize;
                        let y1 = ((h as isize - dy).min(h as isize)) as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = ((w as isize - dx).min(w as isize)) as usize;
                        let mut wg = 0.0f32;
                        for y in y0..y1 {
                            let in_row = ((y as isize + dy) as usize) * w;
                            let out_row = y * w;
                            for x in x0..x1 {
                                let in_idx = in_row + (x as isize + dx) as usize;
                                let g = g_plane[out_row + x];
                                wg += g * in_plane[in_idx];
                                gi_plane[in_idx] += wv * g;
                            }
                        }
                        grad_w[widx] = wg;
                    }
                }
            }
        }
        (grad_in, grad_w, grad_b)
    }
}

pub(crate) fn relu(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Mask `grad` by the post-activation output.
pub(crate) fn relu_backward(grad: &mut [f32], activated: &[f32]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max pooling. Returns the pooled tensor and, per output element, the
/// flat input index of the winning element (needed for the backward pass).
pub(crate) fn maxpool2(input: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; c * oh * ow];
    let mut idx = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_at = 0usize;
                for sy in 0..2 {
                    for sx in 0..2 {
                        let at = (oy * 2 + sy) * w + ox * 2 + sx;
                        if plane[at] > best {
                            best = plane[at];
                            best_at = at;
                        }
                    }
                }
                let o = ch * oh * ow + oy * ow + ox;
                out[o] = best;
                idx[o] = (ch * h * w + best_at) as u32;
            }
        }
    }
    (out, idx)
}

pub(crate) fn maxpool2_backward(
    grad_out: &[f32],
    idx: &[u32],
    c: usize,
    h: usize,
    w: usize,
) -> Vec<f32> {
    let mut grad_in = vec![0.0f32; c * h * w];
    for (g, &at) in grad_out.iter().zip(idx) {
        grad_in[at as usize] += g;
    }
    grad_in
}

/// Average pooling by an integer factor; used to downsample stage inputs
/// to the reference backends' working resolution.
pub(crate) fn avgpool(input: &[f32], c: usize, h: usize, w: usize, factor: usize) -> Vec<f32> {
    debug_assert!(h % factor == 0 && w % factor == 0);
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f32;
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for sy in 0..factor {
                    let row = (oy * factor + sy) * w + ox * factor;
                    for sx in 0..factor {
                        acc += plane[row + sx];
                    }
                }
                out[ch * oh * ow + oy * ow + ox] = acc * norm;
            }
        }
    }
    out
}

pub(crate) fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy on a logit. Returns the loss
/// and its gradient with respect to the logit.
pub(crate) fn bce_with_logits(z: f32, target: f32, weight: f32) -> (f64, f32) {
    let loss = z.max(0.0) - z * target + (-(z.abs())).exp().ln_1p();
    let grad = sigmoid(z) - target;
    ((weight * loss) as f64, weight * grad)
}

/// Softmax cross-entropy. Returns the loss and the gradient with respect
/// to the logits.
pub(crate) fn softmax_ce(logits: &[f32], target: usize) -> (f64, Vec<f32>) {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    let mut grad: Vec<f32> = exps.iter().map(|e| e / sum).collect();
    let loss = -(grad[target].max(1e-30)).ln() as f64;
    grad[target] -= 1.0;
    (loss, grad)
}

/// Softmax over logits, evaluated in f64 so downstream simplex checks hold
/// to tight tolerance.
pub(crate) fn softmax_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|z| ((*z as f64) - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Adam over a flat parameter vector. The step size is passed per call so
/// callers can schedule it.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: u32,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(param_count: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f32) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Serialize a flat f32 slice as little-endian bytes.
pub(crate) fn f32s_to_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn bytes_to_f32s(bytes: &[u8], expected: usize) -> Result<Vec<f32>> {
    if bytes.len() != expected * 4 {
        return Err(Error::Schema(format!(
            "weight blob holds {} bytes, expected {}",
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn conv_identity_kernel() {
        let mut rng = StdRng::seed_from_u64(0);
        let mut conv = Conv2d::new(1, 1, 3, &mut rng);
        conv.weight.fill(0.0);
        conv.weight[4] = 1.0; // center tap
        conv.bias[0] = 0.0;
        let input: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let out = conv.forward(&input, 4, 4);
        assert_eq!(out, input);
    }

    #[test]
    fn maxpool_and_backward() {
        let input = vec![
            1.0, 2.0, 5.0, 6.0, //
            3.0, 4.0, 7.0, 8.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 9.0, 0.0, 0.0,
        ];
        let (out, idx) = maxpool2(&input, 1, 4, 4);
        assert_eq!(out, vec![4.0, 8.0, 9.0, 1.0]);
        let grad_in = maxpool2_backward(&[1.0, 1.0, 1.0, 1.0], &idx, 1, 4, 4);
        assert_eq!(grad_in.iter().sum::<f32>(), 4.0);
        assert_eq!(grad_in[5], 1.0);
        assert_eq!(grad_in[7], 1.0);
    }

    #[test]
    fn avgpool_factor_two() {
        let input = vec![1.0, 3.0, 5.0, 7.0];
        let out = avgpool(&input, 1, 2, 2, 2);
        assert_eq!(out, vec![4.0]);
    }

    #[test]
    fn softmax_ce_gradient_sums_to_zero() {
        let (loss, grad) = softmax_ce(&[0.5, -1.0, 2.0], 2);
        assert!(loss > 0.0);
        assert!(grad.iter().sum::<f32>().abs() < 1e-6);
    }

    /// Finite-difference oracle over a small conv-pool-conv stack with a
    /// composite loss touching every primitive. Biases are offset so the
    /// relu units sit away from their kink, where finite differences are
    /// meaningful.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(7);
        let (h, w) = (6, 6);
        let mut conv1 = Conv2d::new(2, 3, 3, &mut rng);
        let mut conv2 = Conv2d::new(3, 2, 3, &mut rng);
        conv1.bias.fill(0.8);
        conv2.bias.fill(0.8);
        let input: Vec<f32> = (0..2 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();

        let forward = |c1: &Conv2d, c2: &Conv2d| -> (f64, Vec<f32>, Vec<f32>, Vec<f32>, Vec<u32>) {
            let mut a1 = c1.forward(&input, h, w);
            relu(&mut a1);
            let (p1, idx) = maxpool2(&a1, 3, h, w);
            let a2 = c2.forward(&p1, h / 2, w / 2);
            // Composite loss: BCE on the first logit, CE over the next
            // three, L2 on the rest.
            let (bce, _) = bce_with_logits(a2[0], 1.0, 2.0);
            let (ce, _) = softmax_ce(&a2[1..4], 1);
            let l2: f64 = a2[4..].iter().map(|v| (*v as f64).powi(2)).sum();
            (bce + ce + l2, a1, p1, a2, idx)
        };

        let (loss0, a1, p1, a2, idx) = forward(&conv1, &conv2);

        // Analytic gradients.
        let mut grad_a2 = vec![0.0f32; a2.len()];
        let (_, g_bce) = bce_with_logits(a2[0], 1.0, 2.0);
        grad_a2[0] = g_bce;
        let (_, g_ce) = softmax_ce(&a2[1..4], 1);
        grad_a2[1..4].copy_from_slice(&g_ce);
        for i in 4..a2.len() {
            grad_a2[i] = 2.0 * a2[i];
        }
        let (mut grad_p1, grad_w2, _grad_b2) = conv2.backward(&p1, &grad_a2, h / 2, w / 2);
        let _ = &mut grad_p1;
        let mut grad_a1 = maxpool2_backward(&grad_p1, &idx, 3, h, w);
        relu_backward(&mut grad_a1, &a1);
        let (_, grad_w1, grad_b1) = conv1.backward(&input, &grad_a1, h, w);

        let eps = 1e-3f32;
        let mut check = |analytic: f32, perturb: &mut dyn FnMut(f32) -> f64| {
            let up = perturb(eps);
            let down = perturb(-eps);
            let numeric = (up - down) / (2.0 * eps as f64);
            let denom = numeric.abs().max(analytic.abs() as f64).max(1e-2);
            assert!(
                ((numeric - analytic as f64) / denom).abs() < 3e-2,
                "finite difference {numeric} vs analytic {analytic}"
            );
        };

        for probe in [0usize, 5, 17, 31] {
            let mut c1 = conv1.clone();
            check(grad_w1[probe], &mut |d| {
                c1.weight[probe] = conv1.weight[probe] + d;
                let out = forward(&c1, &conv2).0;
                c1.weight[probe] = conv1.weight[probe];
                out
            });
        }
        for probe in [0usize, 11, 40] {
            let mut c2 = conv2.clone();
            check(grad_w2[probe], &mut |d| {
                c2.weight[probe] = conv2.weight[probe] + d;
                forward(&conv1, &c2).0
            });
        }
        {
            let mut c1 = conv1.clone();
            check(grad_b1[1], &mut |d| {
                c1.bias[1] = conv1.bias[1] + d;
                forward(&c1, &conv2).0
            });
        }
        assert!(loss0.is_finite());
    }

    #[test]
    fn adam_reduces_quadratic() {
        let mut params = vec![3.0f32, -2.0];
        let mut adam = Adam::new(2);
        for _ in 0..300 {
            let grads: Vec<f32> = params.iter().map(|p| 2.0 * p).collect();
            adam.step(&mut params, &grads, 0.1);
        }
        assert!(params.iter().all(|p| p.abs() < 0.05));
    }

    #[test]
    fn weight_bytes_round_trip() {
        let values = vec![1.5f32, -0.25, 3.25e-8, 0.0];
        let bytes = f32s_to_bytes(&values);
        assert_eq!(bytes_to_f32s(&bytes, 4).unwrap(), values);
        assert!(bytes_to_f32s(&bytes, 5).is_err());
    }
}
