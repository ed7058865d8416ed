//! Kernel SVM over deep features.
//!
//! One-vs-rest C-SVC trained with sequential minimal optimization on a
//! precomputed Gram matrix (shared across the 11 binary problems), then a
//! per-class monotone logistic calibration fitted on a holdout split so
//! the classifier emits a proper probability vector for fusion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::categories::{CategoryId, CategoryMap, NUM_CATEGORIES};
use crate::config::FORMAT_VERSION;
use crate::error::{Error, Result};
use crate::fusion::ClassScores;
use crate::nn::{bytes_to_f32s, f32s_to_bytes};

use super::features::{FeatureVector, FEATURE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Rbf,
    Linear,
}

/// RBF bandwidth policy: the data-adaptive "scale" heuristic
/// `1 / (dim * feature_variance)`, or an explicit value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaPolicy {
    Fixed(f64),
    Named(GammaName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaName {
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Calibration {
    #[serde(rename = "monotone-logistic")]
    MonotoneLogistic,
}

/// Which crops the SVM trains on: ground-truth boxes (default) or the
/// detector's predicted boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainOn {
    Gt,
    Pred,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmConfig {
    pub c: f64,
    pub kernel: Kernel,
    pub gamma_policy: GammaPolicy,
    pub calibration: Calibration,
    pub train_on: TrainOn,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 5.0,
            kernel: Kernel::Rbf,
            gamma_policy: GammaPolicy::Named(GammaName::Scale),
            calibration: Calibration::MonotoneLogistic,
            train_on: TrainOn::Gt,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::Config(format!("SVM C {} must be positive", self.c)));
        }
        if let GammaPolicy::Fixed(g) = self.gamma_policy {
            if !(g > 0.0) {
                return Err(Error::Config(format!("gamma {g} must be positive")));
            }
        }
        Ok(())
    }
}

/// One binary one-vs-rest problem: sparse dual coefficients over the
/// shared support set, bias, and calibration parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BinaryClassifier {
    /// (support index, alpha_i * y_i) pairs.
    coeffs: Vec<(u32, f64)>,
    bias: f64,
    calib_a: f64,
    calib_b: f64,
    /// False when the class had no positive training examples; such a
    /// class contributes zero probability.
    active: bool,
}

/// A trained, calibrated multi-class SVM.
#[derive(Debug, Clone)]
pub struct SvmModel {
    pub config: SvmConfig,
    pub categories: CategoryMap,
    pub gamma: f64,
    pub train_accuracy: f64,
    support: Vec<Vec<f32>>,
    classes: Vec<BinaryClassifier>,
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = (*x - *y) as f64;
        acc += d * d;
    }
    acc
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn kernel_eval(kernel: Kernel, gamma: f64, a: &[f32], b: &[f32]) -> f64 {
    match kernel {
        Kernel::Rbf => (-gamma * squared_distance(a, b)).exp(),
        Kernel::Linear => dot(a, b),
    }
}

/// Train the one-vs-rest SVM. Calibration is fitted on the holdout
/// (`cal_features`, `cal_labels`); when the holdout is too small the
/// training margins are used instead.
pub fn train_svm(
    features: &[FeatureVector],
    labels: &[CategoryId],
    config: &SvmConfig,
    cal_features: &[FeatureVector],
    cal_labels: &[CategoryId],
) -> Result<SvmModel> {
    config.validate()?;
    if features.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::Config("SVM training set is empty".into()));
    }
    if cal_features.len() != cal_labels.len() {
        return Err(Error::Contract(format!(
            "{} holdout features but {} labels",
            cal_features.len(),
            cal_labels.len()
        )));
    }
    for (i, f) in features.iter().enumerate() {
        if let Some(c) = f.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "training feature {i} component {c} is not finite"
            )));
        }
    }
    let mut present = [false; NUM_CATEGORIES];
    for l in labels {
        present[l.index()] = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::Config(
            "SVM training requires at least two classes".into(),
        ));
    }

    let n = features.len();
    let gamma = match config.gamma_policy {
        GammaPolicy::Fixed(g) => g,
        GammaPolicy::Named(GammaName::Scale) => {
            let mut mean = 0.0f64;
            let mut count = 0usize;
            for f in features {
                for v in f.values() {
                    mean += *v as f64;
                    count += 1;
                }
            }
            mean /= count as f64;
            let mut var = 0.0f64;
            for f in features {
                for v in f.values() {
                    var += (*v as f64 - mean).powi(2);
                }
            }
            var /= count as f64;
            if var <= 0.0 {
                var = 1.0;
            }
            1.0 / (FEATURE_DIM as f64 * var)
        }
    };

    // Shared Gram matrix for all 11 binary problems.
    let mut gram = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let k = kernel_eval(config.kernel, gamma, features[i].values(), features[j].values());
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
    }

    let use_holdout = cal_features.len() >= 2;
    let mut classes = Vec::with_capacity(NUM_CATEGORIES);
    for class in 0..NUM_CATEGORIES {
        if !present[class] {
            classes.push(BinaryClassifier {
                coeffs: Vec::new(),
                bias: 0.0,
                calib_a: 1.0,
                calib_b: 0.0,
                active: false,
            });
            continue;
        }
        let y: Vec<f64> = labels
            .iter()
            .map(|l| if l.index() == class { 1.0 } else { -1.0 })
            .collect();
        let (alpha, rho) = smo_solve(&gram, &y, n, config.c);
        let coeffs: Vec<(u32, f64)> = alpha
            .iter()
            .enumerate()
            .filter(|(_, a)| **a > 0.0)
            .map(|(i, a)| (i as u32, a * y[i]))
            .collect();
        let bias = -rho;

        let margin = |sample: &FeatureVector| -> f64 {
            coeffs
                .iter()
                .map(|(i, c)| {
                    c * kernel_eval(
                        config.kernel,
                        gamma,
                        features[*i as usize].values(),
                        sample.values(),
                    )
                })
                .sum::<f64>()
                + bias
        };
        let (cal_f, cal_l): (&[FeatureVector], &[CategoryId]) = if use_holdout {
            (cal_features, cal_labels)
        } else {
            (features, labels)
        };
        let decisions: Vec<f64> = cal_f.iter().map(margin).collect();
        let positive: Vec<bool> = cal_l.iter().map(|l| l.index() == class).collect();
        let (calib_a, calib_b) = fit_platt(&decisions, &positive);

        classes.push(BinaryClassifier {
            coeffs,
            bias,
            calib_a,
            calib_b,
            active: true,
        });
    }

    // Compact the support set to vectors referenced by at least one class.
    let mut used = vec![false; n];
    for bin in &classes {
        for (i, _) in &bin.coeffs {
            used[*i as usize] = true;
        }
    }
    let mut remap = vec![u32::MAX; n];
    let mut support = Vec::new();
    for i in 0..n {
        if used[i] {
            remap[i] = support.len() as u32;
            support.push(features[i].values().to_vec());
        }
    }
    for bin in &mut classes {
        for (i, _) in &mut bin.coeffs {
            *i = remap[*i as usize];
        }
    }

    let mut model = SvmModel {
        config: *config,
        categories: CategoryMap::fixed(),
        gamma,
        train_accuracy: 0.0,
        support,
        classes,
    };
    let mut correct = 0usize;
    for (f, l) in features.iter().zip(labels) {
        if classify(&model, f)?.argmax().0 == *l {
            correct += 1;
        }
    }
    model.train_accuracy = correct as f64 / n as f64;
    Ok(model)
}

/// Calibrated 11-way probabilities for one feature vector. Valid simplex
/// output for any finite input.
pub fn classify(model: &SvmModel, feat: &FeatureVector) -> Result<ClassScores> {
    // FeatureVector construction already guarantees dimension and
    // finiteness; evaluate each class against the shared support set.
    let kvals: Vec<f64> = model
        .support
        .iter()
        .map(|sv| kernel_eval(model.config.kernel, model.gamma, sv, feat.values()))
        .collect();
    let mut weights = [0.0f64; NUM_CATEGORIES];
    for (class, bin) in model.classes.iter().enumerate() {
        if !bin.active {
            continue;
        }
        let margin: f64 = bin
            .coeffs
            .iter()
            .map(|(i, c)| c * kvals[*i as usize])
            .sum::<f64>()
            + bin.bias;
        weights[class] = platt_probability(bin.calib_a, bin.calib_b, margin);
    }
    ClassScores::from_weights(weights)
}

/// Uncalibrated per-class margins, exposed for diagnostics and tests.
pub fn decision_margins(model: &SvmModel, feat: &FeatureVector) -> Vec<f64> {
    let kvals: Vec<f64> = model
        .support
        .iter()
        .map(|sv| kernel_eval(model.config.kernel, model.gamma, sv, feat.values()))
        .collect();
    model
        .classes
        .iter()
        .map(|bin| {
            bin.coeffs
                .iter()
                .map(|(i, c)| c * kvals[*i as usize])
                .sum::<f64>()
                + bin.bias
        })
        .collect()
}

fn platt_probability(a: f64, b: f64, f: f64) -> f64 {
    let fapb = a * f + b;
    if fapb >= 0.0 {
        (-fapb).exp() / (1.0 + (-fapb).exp())
    } else {
        1.0 / (1.0 + fapb.exp())
    }
}

/// SMO with maximal-violating-pair working-set selection on a precomputed
/// Gram matrix. Returns the dual variables and the decision offset `rho`;
/// the decision function is `sum_i alpha_i y_i K(x_i, x) - rho`.
fn smo_solve(gram: &[f64], y: &[f64], n: usize, c: f64) -> (Vec<f64>, f64) {
    const EPS: f64 = 1e-3;
    const TAU: f64 = 1e-12;
    let max_iter = 200_000.max(100 * n);

    let mut alpha = vec![0.0f64; n];
    // Gradient of the dual objective 1/2 a'Qa - e'a, with Q_ij = y_i y_j K_ij.
    let mut grad = vec![-1.0f64; n];

    for _ in 0..max_iter {
        // i maximizes -y_i G_i over I_up; j minimizes over I_low.
        let mut g_max = f64::NEG_INFINITY;
        let mut g_min = f64::INFINITY;
        let mut i_sel = usize::MAX;
        let mut j_sel = usize::MAX;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let in_up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let in_low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            if in_up && v > g_max {
                g_max = v;
                i_sel = t;
            }
            if in_low && v < g_min {
                g_min = v;
                j_sel = t;
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || g_max - g_min < EPS {
            break;
        }
        let (i, j) = (i_sel, j_sel);

        let quad =
            (gram[i * n + i] + gram[j * n + j] - 2.0 * gram[i * n + j]).max(TAU);
        let old_ai = alpha[i];
        let old_aj = alpha[j];

        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 && alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = diff;
            } else if diff <= 0.0 && alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = c - diff;
            } else if diff <= 0.0 && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = sum - c;
            } else if sum <= c && alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = sum - c;
            } else if sum <= c && alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let d_i = alpha[i] - old_ai;
        let d_j = alpha[j] - old_aj;
        if d_i == 0.0 && d_j == 0.0 {
            break;
        }
        for t in 0..n {
            grad[t] += y[t] * y[i] * gram[i * n + t] * d_i + y[t] * y[j] * gram[j * n + t] * d_j;
        }
    }

    // rho per the KKT conditions: average y*G over free points, else the
    // midpoint of the feasible interval.
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let mut sum_free = 0.0f64;
    let mut n_free = 0usize;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (upper + lower) / 2.0
    };
    (alpha, rho)
}

/// Platt's monotone logistic calibration with the regularized targets and
/// backtracking Newton iteration of Lin, Weng, and Keerthi. Fits (A, B) so
/// that `P(class | f) = 1 / (1 + exp(A*f + B))`.
fn fit_platt(decisions: &[f64], positive: &[bool]) -> (f64, f64) {
    let prior1 = positive.iter().filter(|p| **p).count() as f64;
    let prior0 = decisions.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let targets: Vec<f64> = positive.iter().map(|p| if *p { hi } else { lo }).collect();

    let objective = |a: f64, b: f64| -> f64 {
        decisions
            .iter()
            .zip(&targets)
            .map(|(f, t)| {
                let fapb = a * f + b;
                if fapb >= 0.0 {
                    t * fapb + (-fapb).exp().ln_1p()
                } else {
                    (t - 1.0) * fapb + fapb.exp().ln_1p()
                }
            })
            .sum()
    };

    const MAX_ITER: usize = 100;
    const MIN_STEP: f64 = 1e-10;
    const SIGMA: f64 = 1e-12;
    const EPS: f64 = 1e-5;

    let mut a = 0.0f64;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let mut fval = objective(a, b);

    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21) = (SIGMA, SIGMA, 0.0f64);
        let (mut g1, mut g2) = (0.0f64, 0.0f64);
        for (f, t) in decisions.iter().zip(&targets) {
            let fapb = a * f + b;
            let (p, q) = if fapb >= 0.0 {
                let e = (-fapb).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = fapb.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < EPS && g2.abs() < EPS {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0f64;
        let mut stepped = false;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                stepped = true;
                break;
            }
            step /= 2.0;
        }
        if !stepped {
            break;
        }
    }
    (a, b)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    config: SvmConfig,
    categories: CategoryMap,
    gamma: f64,
    train_accuracy: f64,
    n_support: usize,
    feature_dim: usize,
    classes: Vec<BinaryClassifier>,
}

const MODEL_MAGIC: &[u8; 4] = b"ESVM";

impl SvmModel {
    /// Serialize as a single self-describing blob: magic, JSON header,
    /// then the support vectors as raw little-endian f32.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader {
            format_version: FORMAT_VERSION,
            config: self.config,
            categories: self.categories.clone(),
            gamma: self.gamma,
            train_accuracy: self.train_accuracy,
            n_support: self.support.len(),
            feature_dim: FEATURE_DIM,
            classes: self.classes.clone(),
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Schema(format!("model header serialization failed: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for sv in &self.support {
            out.extend_from_slice(&f32s_to_bytes(sv));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |msg: &str| Error::Schema(format!("SVM model blob: {msg}"));
        if bytes.len() < 12 || &bytes[..4] != MODEL_MAGIC {
            return Err(fail("bad magic"));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let header_end = 12 + header_len;
        if bytes.len() < header_end {
            return Err(fail("truncated header"));
        }
        let header: ModelHeader = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| fail(&format!("header parse error: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(fail(&format!(
                "format version {} unsupported",
                header.format_version
            )));
        }
        if header.feature_dim != FEATURE_DIM {
            return Err(fail(&format!(
                "feature dim {} unsupported",
                header.feature_dim
            )));
        }
        header.categories.validate()?;
        let payload = &bytes[header_end..];
        let flat = bytes_to_f32s(payload, header.n_support * FEATURE_DIM)?;
        let support: Vec<Vec<f32>> = flat.chunks_exact(FEATURE_DIM).map(|c| c.to_vec()).collect();
        for bin in &header.classes {
            for (i, _) in &bin.coeffs {
                if *i as usize >= support.len() {
                    return Err(fail("coefficient references missing support vector"));
                }
            }
        }
        Ok(Self {
            config: header.config,
            categories: header.categories,
            gamma: header.gamma,
            train_accuracy: header.train_accuracy,
            support,
            classes: header.classes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    /// Embed a low-dimensional point into a full-width feature vector.
    fn lift(point: &[f32]) -> FeatureVector {
        let mut values = vec![0.0f32; FEATURE_DIM];
        values[..point.len()].copy_from_slice(point);
        FeatureVector::new(values).unwrap()
    }

    fn cluster_data(
        centers: &[[f32; 2]],
        per_class: usize,
        spread: f32,
        seed: u64,
    ) -> (Vec<FeatureVector>, Vec<CategoryId>) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (class, center) in centers.iter().enumerate() {
            for _ in 0..per_class {
                let p = [
                    center[0] + rng.random_range(-spread..spread),
                    center[1] + rng.random_range(-spread..spread),
                ];
                features.push(lift(&p));
                labels.push(CategoryId::new(class).unwrap());
            }
        }
        (features, labels)
    }

    fn fixed_gamma_config() -> SvmConfig {
        // The scale heuristic is built for full-width features; these
        // tests embed 2-D points, so pin gamma explicitly.
        SvmConfig {
            gamma_policy: GammaPolicy::Fixed(0.5),
            ..Default::default()
        }
    }

    #[test]
    fn smo_two_orthonormal_points() {
        // K = I, y = (+1, -1): analytic solution alpha = (1, 1), rho = 0.
        let gram = vec![1.0, 0.0, 0.0, 1.0];
        let (alpha, rho) = smo_solve(&gram, &[1.0, -1.0], 2, 10.0);
        assert!((alpha[0] - 1.0).abs() < 1e-3);
        assert!((alpha[1] - 1.0).abs() < 1e-3);
        assert!(rho.abs() < 1e-3);
    }

    #[test]
    fn smo_solution_satisfies_kkt() {
        let mut rng = StdRng::seed_from_u64(9);
        let n = 60;
        let points: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let base = if i % 2 == 0 { 1.5 } else { -1.5 };
                [
                    base + rng.random_range(-1.0..1.0),
                    base + rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let gamma = 0.3;
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let d2 = (points[i][0] - points[j][0]).powi(2)
                    + (points[i][1] - points[j][1]).powi(2);
                gram[i * n + j] = (-gamma * d2).exp();
            }
        }
        let c = 5.0;
        let (alpha, rho) = smo_solve(&gram, &y, n, c);
        // sum alpha_i y_i = 0
        let balance: f64 = alpha.iter().zip(&y).map(|(a, yi)| a * yi).sum();
        assert!(balance.abs() < 1e-6, "dual balance {balance}");
        // KKT conditions on y_i * f(x_i).
        for i in 0..n {
            let f: f64 = (0..n).map(|j| alpha[j] * y[j] * gram[j * n + i]).sum::<f64>() - rho;
            let yf = y[i] * f;
            if alpha[i] <= 1e-9 {
                assert!(yf >= 1.0 - 0.01, "alpha=0 sample {i} has margin {yf}");
            } else if alpha[i] >= c - 1e-9 {
                assert!(yf <= 1.0 + 0.01, "alpha=C sample {i} has margin {yf}");
            } else {
                assert!((yf - 1.0).abs() < 0.01, "free sample {i} has margin {yf}");
            }
        }
    }

    #[test]
    fn separable_clusters_reach_full_holdout_accuracy() {
        let centers = [[0.0f32, 0.0], [6.0, 6.0], [-6.0, 6.0]];
        let (train_f, train_l) = cluster_data(&centers, 12, 1.0, 1);
        let (hold_f, hold_l) = cluster_data(&centers, 6, 1.0, 2);
        let model =
            train_svm(&train_f, &train_l, &fixed_gamma_config(), &hold_f, &hold_l).unwrap();
        assert!(model.train_accuracy > 0.99);
        let mut correct = 0;
        for (f, l) in hold_f.iter().zip(&hold_l) {
            if classify(&model, f).unwrap().argmax().0 == *l {
                correct += 1;
            }
        }
        assert_eq!(correct, hold_f.len());
    }

    #[test]
    fn classify_output_is_simplex() {
        let centers = [[0.0f32, 0.0], [5.0, 5.0]];
        let (train_f, train_l) = cluster_data(&centers, 10, 1.0, 3);
        let model = train_svm(&train_f, &train_l, &fixed_gamma_config(), &[], &[]).unwrap();
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..50 {
            let p = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
            let scores = classify(&model, &lift(&p)).unwrap();
            scores.validate().unwrap();
        }
    }

    #[test]
    fn label_permutation_permutes_argmax() {
        let centers = [[0.0f32, 0.0], [6.0, 0.0], [0.0, 6.0], [6.0, 6.0]];
        let (features, labels) = cluster_data(&centers, 10, 0.8, 5);
        // Permutation on the four used classes.
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<CategoryId> = labels
            .iter()
            .map(|l| CategoryId::new(perm[l.index()]).unwrap())
            .collect();
        let base = train_svm(&features, &labels, &fixed_gamma_config(), &[], &[]).unwrap();
        let relabeled =
            train_svm(&features, &permuted, &fixed_gamma_config(), &[], &[]).unwrap();
        let (probe_f, _) = cluster_data(&centers, 3, 0.8, 6);
        for f in &probe_f {
            let a = classify(&base, f).unwrap().argmax().0;
            let b = classify(&relabeled, f).unwrap().argmax().0;
            assert_eq!(perm[a.index()], b.index());
        }
    }

    #[test]
    fn single_class_input_rejected() {
        let (features, _) = cluster_data(&[[0.0f32, 0.0]], 8, 1.0, 7);
        let labels = vec![CategoryId::new(3).unwrap(); features.len()];
        assert!(matches!(
            train_svm(&features, &labels, &SvmConfig::default(), &[], &[]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn serialization_round_trip_is_exact() {
        let centers = [[0.0f32, 0.0], [6.0, 6.0], [-6.0, 6.0]];
        let (train_f, train_l) = cluster_data(&centers, 10, 1.0, 8);
        let model = train_svm(&train_f, &train_l, &fixed_gamma_config(), &[], &[]).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("svm.bin");
        model.save(&path).unwrap();
        let restored = SvmModel::load(&path).unwrap();
        let (probe_f, _) = cluster_data(&centers, 4, 1.5, 9);
        for f in &probe_f {
            let a = classify(&model, f).unwrap();
            let b = classify(&restored, f).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // Byte-stable re-serialization.
        assert_eq!(model.to_bytes().unwrap(), restored.to_bytes().unwrap());
    }

    #[test]
    fn platt_fit_is_monotone_for_oriented_margins() {
        let decisions: Vec<f64> = (-20..=20).map(|i| i as f64 / 4.0).collect();
        let positive: Vec<bool> = decisions.iter().map(|d| *d > 0.0).collect();
        let (a, b) = fit_platt(&decisions, &positive);
        assert!(a < 0.0, "expected decreasing fApB in f, got A={a}");
        let p_lo = platt_probability(a, b, -4.0);
        let p_hi = platt_probability(a, b, 4.0);
        assert!(p_lo < 0.2 && p_hi > 0.8);
    }
}
