//! From-scratch training harness comparing the one-hot loss with the
//! combined one-hot + hue loss on a small convolutional network.

pub mod data;
pub mod net;
pub mod optim;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationImage;
use crate::error::{Error, Result};
use crate::hue_loss::{assign_labels, combined_loss_with, log_sum_exp, nearest_label, softmax, AngularLabelSet, HueLossConfig, LabelMode};
use crate::par::Parallelism;
use crate::seed;

pub use data::{hflip, pad_crop, stratified_folds, AugmentDraw, Augmentation};
pub use net::{ForwardCache, ForwardOutput, NetShape, TinyNet};
pub use optim::{Adam, AdamConfig, CosineAnnealing};

pub const BACKBONE_NOTE: &str =
    "TinyNet (conv16-pool-conv32-pool-gap, 64-bit): a desk-scale stand-in backbone; accuracies are not comparable to large-backbone benchmarks";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Onehot,
    OnehotHue,
}

impl LossMode {
    pub const ALL: [LossMode; 2] = [LossMode::Onehot, LossMode::OnehotHue];

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Onehot => "onehot",
            LossMode::OnehotHue => "onehot_hue",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "onehot" => Ok(LossMode::Onehot),
            "onehot_hue" => Ok(LossMode::OnehotHue),
            other => Err(Error::Config(format!("unknown loss mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_min: f64,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub label_mode: LabelMode,
    /// 0 trains on every sample without validation; otherwise ≥ 2.
    pub folds: usize,
    pub augmentation: Augmentation,
    pub hue_hidden: Option<usize>,
    pub hue_weight: f64,
    pub adam: AdamConfig,
    #[serde(skip)]
    pub par: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_min: 0.0,
            seed: 0,
            loss_mode: LossMode::OnehotHue,
            label_mode: LabelMode::default(),
            folds: 5,
            augmentation: Augmentation::default(),
            hue_hidden: None,
            hue_weight: 1.0,
            adam: AdamConfig::default(),
            par: Parallelism::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.folds == 1 {
            return Err(Error::Config("folds must be 0 (no validation) or at least 2".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0 && self.lr_min.is_finite() && self.lr_min >= 0.0) {
            return Err(Error::Config(format!(
                "learning rates must be finite and non-negative ({}, {})",
                self.learning_rate, self.lr_min
            )));
        }
        if !self.hue_weight.is_finite() {
            return Err(Error::Config("hue weight must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean total loss over the epoch's (augmented) samples.
    pub train_loss: f64,
    pub one_hot_loss: f64,
    pub hue_loss: f64,
    /// Running accuracy of the one-hot head on the augmented samples.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// `None` when training on the full dataset.
    pub fold: Option<usize>,
    pub train_size: usize,
    pub val_size: usize,
    pub epochs: Vec<EpochStats>,
    /// One-hot head accuracy on un-augmented training samples after training.
    pub final_train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    /// Nearest-angular-label accuracy of the hue head.
    pub val_hue_accuracy: Option<f64>,
    /// Batches whose hue-head gradient was nonzero.
    pub hue_grad_nonzero_batches: usize,
    pub hue_grad_max_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl AccuracySummary {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub backbone: String,
    pub parameter_count: usize,
    pub classes: usize,
    pub samples: usize,
    pub config: TrainConfig,
    pub angular_labels: Vec<(f64, f64)>,
    pub folds: Vec<FoldReport>,
    /// Validation accuracy across folds; `None` without cross-validation.
    pub val_summary: Option<AccuracySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub loss_mode: LossMode,
    pub seeds: Vec<u64>,
    /// Per seed: mean validation accuracy over folds.
    pub per_seed: Vec<f64>,
    pub summary: AccuracySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub runs: Vec<TrainReport>,
    pub table: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("loss_mode,seeds,mean_val_accuracy,sd_val_accuracy\n");
        for row in &self.table {
            out.push_str(&format!(
                "{},{},{:.16e},{:.16e}\n",
                row.loss_mode.name(),
                row.summary.n,
                row.summary.mean,
                row.summary.sd
            ));
        }
        out
    }
}

fn dataset_shape(images: &[ActivationImage], labels: &[u32], hue_hidden: Option<usize>) -> Result<NetShape> {
    let first = images.first().ok_or_else(|| Error::Config("empty training set".into()))?;
    if images.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} images, {} labels", images.len(), labels.len())));
    }
    if let Some(bad) = images
        .iter()
        .find(|i| (i.width(), i.height(), i.channels()) != (first.width(), first.height(), first.channels()))
    {
        return Err(Error::ShapeMismatch(format!(
            "mixed image shapes {}x{}x{} and {}x{}x{}",
            first.width(),
            first.height(),
            first.channels(),
            bad.width(),
            bad.height(),
            bad.channels()
        )));
    }
    let classes = *labels.iter().max().expect("non-empty") as usize + 1;
    Ok(NetShape {
        width: first.width(),
        height: first.height(),
        in_channels: first.channels(),
        classes,
        hue_hidden,
    })
}

/// Per-sample loss value and gradients for one loss mode.
pub fn sample_loss(
    mode: LossMode,
    logits: &[f64],
    hue: [f64; 2],
    labels: &AngularLabelSet,
    class: usize,
    hue_weight: f64,
) -> Result<(f64, f64, Vec<f64>, [f64; 2])> {
    match mode {
        LossMode::Onehot => {
            if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("logit {bad}")));
            }
            let mut g = softmax(logits);
            g[class] -= 1.0;
            Ok((log_sum_exp(logits) - logits[class], 0.0, g, [0.0; 2]))
        }
        LossMode::OnehotHue => {
            let cfg = HueLossConfig {
                hue_weight,
                project_to_circle: false,
            };
            let b = combined_loss_with(logits, labels, (hue[0], hue[1]), class, &cfg)?;
            Ok((b.one_hot_term, b.hue_term, b.grad_logits, b.grad_prediction))
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// (one-hot head accuracy, hue head accuracy) on un-augmented samples.
pub fn evaluate(
    net: &TinyNet,
    images: &[ActivationImage],
    labels: &[u32],
    indices: &[usize],
    angular: &AngularLabelSet,
    par: Parallelism,
) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let hits = par.try_map(indices.len(), |j| {
        let i = indices[j];
        let out = net.forward(&images[i])?;
        let c = labels[i] as usize;
        Ok::<_, Error>((argmax(&out.logits) == c, nearest_label(angular, (out.hue[0], out.hue[1])) == c))
    })?;
    let n = indices.len() as f64;
    Ok((
        hits.iter().filter(|h| h.0).count() as f64 / n,
        hits.iter().filter(|h| h.1).count() as f64 / n,
    ))
}

struct FoldInputs<'a> {
    images: &'a [ActivationImage],
    labels: &'a [u32],
    angular: &'a AngularLabelSet,
    shape: NetShape,
    config: &'a TrainConfig,
}

fn run_fold(inputs: &FoldInputs, fold: Option<usize>, train_idx: Vec<usize>, val_idx: Vec<usize>) -> Result<FoldReport> {
    let config = inputs.config;
    let stream_index = fold.map_or(u32::MAX as u64, |f| f as u64);
    let mut net = TinyNet::new(inputs.shape, &mut seed::rng(config.seed, seed::substream(seed::stream::INIT, stream_index)))?;
    let mut shuffle_rng = seed::rng(config.seed, seed::substream(seed::stream::SHUFFLE, stream_index));
    let mut augment_rng = seed::rng(config.seed, seed::substream(seed::stream::AUGMENT, stream_index));
    let mut adam = Adam::new(net.parameter_count(), config.adam);
    let schedule = CosineAnnealing {
        lr_max: config.learning_rate,
        lr_min: config.lr_min,
        t_max: config.epochs,
    };
    let hue_blocks = net.layout().hue_head();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut hue_grad_nonzero_batches = 0;
    let mut hue_grad_max_norm: f64 = 0.0;
    let mut order = train_idx.clone();

    for epoch in 0..config.epochs {
        let lr = schedule.lr(epoch);
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut one_hot, mut hue, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let draws: Vec<AugmentDraw> = batch.iter().map(|_| config.augmentation.draw(&mut augment_rng)).collect();
            let per_sample = config.par.try_map(batch.len(), |j| {
                let i = batch[j];
                let img = config.augmentation.apply(&inputs.images[i], draws[j]);
                let out = net.forward(&img)?;
                let class = inputs.labels[i] as usize;
                let (oh, hu, gl, gp) = sample_loss(config.loss_mode, &out.logits, out.hue, inputs.angular, class, config.hue_weight)?;
                let grad = net.backward(&out.cache, &gl, gp)?;
                Ok::<_, Error>((oh, hu, argmax(&out.logits) == class, grad))
            })?;
            let mut grad = vec![0.0; net.parameter_count()];
            let (mut batch_oh, mut batch_hue) = (0.0, 0.0);
            for (oh, hu, hit, g) in &per_sample {
                batch_oh += oh;
                batch_hue += hu;
                correct += *hit as usize;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            if !(batch_oh + batch_hue).is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at fold {fold:?} epoch {epoch} batch {b}: one-hot {batch_oh}, hue {batch_hue}"
                )));
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            let hue_norm = hue_blocks
                .iter()
                .flat_map(|r| grad[r.clone()].iter())
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if hue_norm > 0.0 {
                hue_grad_nonzero_batches += 1;
            }
            hue_grad_max_norm = hue_grad_max_norm.max(hue_norm);
            one_hot += batch_oh;
            hue += batch_hue;
            total += batch_oh + batch_hue;
            let delta = adam.step(&grad, lr);
            net.apply(&delta);
        }
        let n = order.len() as f64;
        epochs.push(EpochStats {
            epoch,
            learning_rate: lr,
            train_loss: total / n,
            one_hot_loss: one_hot / n,
            hue_loss: hue / n,
            train_accuracy: correct as f64 / n,
        });
    }

    let (final_train_accuracy, _) = evaluate(&net, inputs.images, inputs.labels, &train_idx, inputs.angular, config.par)?;
    let (val_accuracy, val_hue_accuracy) = if val_idx.is_empty() {
        (None, None)
    } else {
        let (a, h) = evaluate(&net, inputs.images, inputs.labels, &val_idx, inputs.angular, config.par)?;
        (Some(a), Some(h))
    };
    Ok(FoldReport {
        fold,
        train_size: train_idx.len(),
        val_size: val_idx.len(),
        epochs,
        final_train_accuracy,
        val_accuracy,
        val_hue_accuracy,
        hue_grad_nonzero_batches,
        hue_grad_max_norm,
    })
}

/// Train one loss mode with one seed, with k-fold cross-validation when
/// `config.folds ≥ 2`, otherwise on the whole dataset.
pub fn train(images: &[ActivationImage], labels: &[u32], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let shape = dataset_shape(images, labels, config.hue_hidden)?;
    let angular = assign_labels(shape.classes, config.label_mode, config.seed)?;
    let inputs = FoldInputs {
        images,
        labels,
        angular: &angular,
        shape,
        config,
    };
    let folds = if config.folds >= 2 {
        let assignment = stratified_folds(labels, config.folds, config.seed)?;
        (0..config.folds)
            .map(|f| {
                let (val, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] == f);
                run_fold(&inputs, Some(f), train, val)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![run_fold(&inputs, None, (0..labels.len()).collect(), Vec::new())?]
    };
    let val: Vec<f64> = folds.iter().filter_map(|f| f.val_accuracy).collect();
    Ok(TrainReport {
        backbone: BACKBONE_NOTE.to_string(),
        parameter_count: TinyNet::zeros(shape)?.parameter_count(),
        classes: shape.classes,
        samples: labels.len(),
        config: config.clone(),
        angular_labels: angular.labels().to_vec(),
        folds,
        val_summary: AccuracySummary::of(&val),
    })
}

/// Cross-validated comparison of loss modes over several training seeds.
pub fn compare(
    images: &[ActivationImage],
    labels: &[u32],
    config: &TrainConfig,
    modes: &[LossMode],
    seeds: &[u64],
) -> Result<ComparisonReport> {
    if config.folds < 2 {
        return Err(Error::Config("comparison needs cross-validation (folds >= 2)".into()));
    }
    if modes.is_empty() || seeds.is_empty() {
        return Err(Error::Config("comparison needs at least one loss mode and one seed".into()));
    }
    let mut runs = Vec::new();
    let mut table = Vec::new();
    for &mode in modes {
        let mut per_seed = Vec::new();
        for &s in seeds {
            let report = train(
                images,
                labels,
                &TrainConfig {
                    seed: s,
                    loss_mode: mode,
                    ..config.clone()
                },
            )?;
            per_seed.push(report.val_summary.as_ref().expect("folds >= 2").mean);
            runs.push(report);
        }
        table.push(ComparisonRow {
            loss_mode: mode,
            seeds: seeds.to_vec(),
            summary: AccuracySummary::of(&per_seed).expect("non-empty"),
            per_seed,
        });
    }
    Ok(ComparisonReport { runs, table })
}
