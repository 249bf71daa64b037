//! Angular class labels and the combined one-hot + hue loss.
//!
//! Each class owns a point on the unit circle. The network's hue head
//! predicts a free 2-vector; `dθ_c` is its Euclidean distance to class c's
//! point divided by 2M, and the hue term is the softmax cross-entropy over
//! `-dθ`. The total loss adds the standard one-hot cross-entropy with equal
//! weight. All math is 64-bit with log-sum-exp stabilization.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Below this distance the Euclidean norm is treated as non-differentiable
/// and contributes a zero subgradient.
const KINK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    EquallySpaced,
    /// Equally spaced angle set, assigned to classes by a seeded permutation.
    #[default]
    RandomPermutation,
    RandomAngles,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equally_spaced" => Ok(LabelMode::EquallySpaced),
            "random_permutation" => Ok(LabelMode::RandomPermutation),
            "random_angles" => Ok(LabelMode::RandomAngles),
            other => Err(Error::Config(format!("unknown label mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularLabelSet {
    labels: Vec<(f64, f64)>,
    pub mode: LabelMode,
    pub seed: u64,
}

impl AngularLabelSet {
    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, class: usize) -> (f64, f64) {
        self.labels[class]
    }

    pub fn labels(&self) -> &[(f64, f64)] {
        &self.labels
    }

    /// Apply the same rotation to every label.
    pub fn rotated(&self, angle: f64) -> Self {
        Self {
            labels: self.labels.iter().map(|&p| rotate(p, angle)).collect(),
            ..self.clone()
        }
    }

    /// Relabel classes: new class `perm[c]` receives old class `c`'s point.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut labels = self.labels.clone();
        for (c, &p) in perm.iter().enumerate() {
            labels[p] = self.labels[c];
        }
        Self { labels, ..self.clone() }
    }
}

pub fn rotate((x, y): (f64, f64), angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * x - s * y, s * x + c * y)
}

pub fn assign_labels(classes: usize, mode: LabelMode, seed: u64) -> Result<AngularLabelSet> {
    if classes < 2 {
        return Err(Error::BadClassCount(classes));
    }
    let mut rng = seed::rng(seed, seed::stream::LABELS);
    let mut angles: Vec<f64> = match mode {
        LabelMode::EquallySpaced | LabelMode::RandomPermutation => {
            (0..classes).map(|c| TAU * c as f64 / classes as f64).collect()
        }
        LabelMode::RandomAngles => (0..classes).map(|_| rng.random::<f64>() * TAU).collect(),
    };
    if mode == LabelMode::RandomPermutation {
        angles.shuffle(&mut rng);
    }
    Ok(AngularLabelSet {
        labels: angles.iter().map(|a| (a.cos(), a.sin())).collect(),
        mode,
        seed,
    })
}

/// Scaled Euclidean distance between the prediction and class `class`'s label.
pub fn dtheta(labels: &AngularLabelSet, prediction: (f64, f64), class: usize) -> f64 {
    let (lx, ly) = labels.labels[class];
    let m = labels.classes() as f64;
    (lx - prediction.0).hypot(ly - prediction.1) / (2.0 * m)
}

/// Class whose label is nearest to the prediction (lowest index on ties).
pub fn nearest_label(labels: &AngularLabelSet, prediction: (f64, f64)) -> usize {
    (0..labels.classes())
        .map(|c| (c, dtheta(labels, prediction, c)))
        .fold((0, f64::INFINITY), |best, (c, d)| if d < best.1 { (c, d) } else { best })
        .0
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HueLossConfig {
    /// Weight of the hue term. 1.0 is the equal mix; other values are ablations.
    pub hue_weight: f64,
    /// Project the prediction onto the unit circle before measuring distances
    /// (ablation; off by default).
    pub project_to_circle: bool,
}

impl Default for HueLossConfig {
    fn default() -> Self {
        Self {
            hue_weight: 1.0,
            project_to_circle: false,
        }
    }
}

/// Hue term value and its gradient with respect to the prediction.
pub fn hue_loss(labels: &AngularLabelSet, prediction: (f64, f64), true_class: usize) -> (f64, [f64; 2]) {
    let m = labels.classes();
    let scale = 2.0 * m as f64;
    let d: Vec<f64> = (0..m).map(|c| dtheta(labels, prediction, c)).collect();
    let neg: Vec<f64> = d.iter().map(|v| -v).collect();
    let value = d[true_class] + log_sum_exp(&neg);
    let p = softmax(&neg);
    let mut grad = [0.0; 2];
    for k in 0..m {
        let upstream = if k == true_class { 1.0 - p[k] } else { -p[k] };
        let (lx, ly) = labels.labels[k];
        let (dx, dy) = (prediction.0 - lx, prediction.1 - ly);
        let dist = dx.hypot(dy);
        if dist < KINK {
            continue;
        }
        grad[0] += upstream * dx / (scale * dist);
        grad[1] += upstream * dy / (scale * dist);
    }
    (value, grad)
}

/// Hue term with optional projection of the prediction onto the unit circle.
pub fn hue_loss_with(
    labels: &AngularLabelSet,
    prediction: (f64, f64),
    true_class: usize,
    project_to_circle: bool,
) -> (f64, [f64; 2]) {
    if !project_to_circle {
        return hue_loss(labels, prediction, true_class);
    }
    let r = prediction.0.hypot(prediction.1);
    if r < KINK {
        return hue_loss(labels, prediction, true_class);
    }
    let u = (prediction.0 / r, prediction.1 / r);
    let (value, g) = hue_loss(labels, u, true_class);
    // d(p/|p|)/dp = (I - u uᵀ) / |p|
    let radial = g[0] * u.0 + g[1] * u.1;
    (value, [(g[0] - radial * u.0) / r, (g[1] - radial * u.1) / r])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub one_hot_term: f64,
    pub hue_term: f64,
    pub total: f64,
    pub grad_logits: Vec<f64>,
    pub grad_prediction: [f64; 2],
}

pub fn combined_loss(
    logits: &[f64],
    labels: &AngularLabelSet,
    prediction: (f64, f64),
    true_class: usize,
) -> Result<LossBreakdown> {
    combined_loss_with(logits, labels, prediction, true_class, &HueLossConfig::default())
}

pub fn combined_loss_with(
    logits: &[f64],
    labels: &AngularLabelSet,
    prediction: (f64, f64),
    true_class: usize,
    config: &HueLossConfig,
) -> Result<LossBreakdown> {
    let m = labels.classes();
    if logits.len() != m {
        return Err(Error::ShapeMismatch(format!("{} logits for {m} classes", logits.len())));
    }
    if true_class >= m {
        return Err(Error::Config(format!("class {true_class} out of range for {m} classes")));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("logit {bad}")));
    }
    if !(prediction.0.is_finite() && prediction.1.is_finite()) {
        return Err(Error::NonFinite(format!("hue prediction {prediction:?}")));
    }
    let one_hot_term = log_sum_exp(logits) - logits[true_class];
    let mut grad_logits = softmax(logits);
    grad_logits[true_class] -= 1.0;
    let (hue_value, hue_grad) = hue_loss_with(labels, prediction, true_class, config.project_to_circle);
    let hue_term = config.hue_weight * hue_value;
    Ok(LossBreakdown {
        one_hot_term,
        hue_term,
        total: one_hot_term + hue_term,
        grad_logits,
        grad_prediction: [config.hue_weight * hue_grad[0], config.hue_weight * hue_grad[1]],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    /// Fixed class count; `None` draws M uniformly from [2, 10] per trial.
    pub classes: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    pub mode: LabelMode,
    pub step: f64,
    /// Predictions closer than this to a label are redrawn.
    pub exclusion: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            classes: None,
            trials: 200,
            seed: 1,
            mode: LabelMode::default(),
            step: 1e-6,
            exclusion: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub max_rel_error_prediction: f64,
    pub max_rel_error_logits: f64,
    pub max_rel_error: f64,
    pub redrawn_predictions: usize,
    pub threshold: f64,
    pub passed: bool,
}

pub const GRADCHECK_THRESHOLD: f64 = 1e-5;

/// Relative error between two gradient vectors, ‖a − b‖ / max(‖a‖, ‖b‖),
/// with the denominator floored at 1e-8 so vanishing gradients compare absolutely.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Compare analytic gradients of the combined loss against central differences.
pub fn gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    if let Some(m) = config.classes {
        if m < 2 {
            return Err(Error::BadClassCount(m));
        }
    }
    if config.trials == 0 {
        return Err(Error::Config("gradcheck needs at least one trial".into()));
    }
    let mut rng = seed::rng(config.seed, seed::stream::GRADCHECK);
    let h = config.step;
    let (mut worst_pred, mut worst_logits, mut redrawn) = (0.0f64, 0.0f64, 0usize);
    for trial in 0..config.trials {
        let m = config.classes.unwrap_or_else(|| rng.random_range(2..=10));
        let labels = assign_labels(m, config.mode, seed::substream(config.seed, trial as u64))?;
        let prediction = loop {
            let p = (rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0));
            let near = labels
                .labels()
                .iter()
                .any(|&(x, y)| (x - p.0).hypot(y - p.1) < config.exclusion);
            if !near {
                break p;
            }
            redrawn += 1;
        };
        let true_class = rng.random_range(0..m);
        let logits: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..=3.0)).collect();
        let analytic = combined_loss(&logits, &labels, prediction, true_class)?;

        let total = |lg: &[f64], p: (f64, f64)| -> Result<f64> {
            Ok(combined_loss(lg, &labels, p, true_class)?.total)
        };
        let numeric_pred = [
            (total(&logits, (prediction.0 + h, prediction.1))? - total(&logits, (prediction.0 - h, prediction.1))?)
                / (2.0 * h),
            (total(&logits, (prediction.0, prediction.1 + h))? - total(&logits, (prediction.0, prediction.1 - h))?)
                / (2.0 * h),
        ];
        let mut numeric_logits = Vec::with_capacity(m);
        for i in 0..m {
            let mut up = logits.clone();
            let mut down = logits.clone();
            up[i] += h;
            down[i] -= h;
            numeric_logits.push((total(&up, prediction)? - total(&down, prediction)?) / (2.0 * h));
        }
        worst_pred = worst_pred.max(relative_error(&analytic.grad_prediction, &numeric_pred));
        worst_logits = worst_logits.max(relative_error(&analytic.grad_logits, &numeric_logits));
    }
    let max_rel_error = worst_pred.max(worst_logits);
    Ok(GradcheckReport {
        config: config.clone(),
        max_rel_error_prediction: worst_pred,
        max_rel_error_logits: worst_logits,
        max_rel_error,
        redrawn_predictions: redrawn,
        threshold: GRADCHECK_THRESHOLD,
        passed: max_rel_error < GRADCHECK_THRESHOLD,
    })
}
