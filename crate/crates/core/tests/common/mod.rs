//! Independent reference implementations used by the integration and
//! acceptance tests. They favour directness over speed.
#![allow(dead_code)]

use std::collections::BTreeMap;

use activation_hue::activation::ActivationImage;
use activation_hue::hue_loss::{assign_labels, LabelMode};
use activation_hue::seed;
use activation_hue::trainer::{sample_loss, LossMode, NetShape, TinyNet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// One memory entry as the oracle sees it.
#[derive(Clone, Debug)]
pub struct Entry {
    pub vector: Vec<f32>,
    pub class_id: u32,
    pub image_id: u32,
}

pub fn dist_sq(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        s += d * d;
    }
    s
}

/// Full scan: sort every entry by (distance, index) and keep the first K.
pub fn full_scan_knn(entries: &[Entry], q: &[f32], k: usize, exclude_image: Option<u32>) -> Vec<(usize, f64)> {
    let mut all: Vec<(f64, usize)> = entries
        .iter()
        .enumerate()
        .filter(|(_, e)| Some(e.image_id) != exclude_image)
        .map(|(i, e)| (dist_sq(q, &e.vector), i))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(d2, i)| (i, d2.sqrt())).collect()
}

/// Direct transcription of the likelihood: for every query pixel, the K
/// nearest entries by full scan, kernel exp(−d²/(α²+ε)) with α the rank-1
/// distance, summed per class and divided by the class's memory count.
pub fn brute_force_scores(entries: &[Entry], pixels: &[Vec<f32>], k: usize, eps: f64) -> BTreeMap<u32, f64> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for e in entries {
        *counts.entry(e.class_id).or_default() += 1;
    }
    let mut sums: BTreeMap<u32, f64> = counts.keys().map(|&c| (c, 0.0)).collect();
    for q in pixels {
        let nn = full_scan_knn(entries, q, k, None);
        let alpha = nn[0].1;
        for (i, d) in nn {
            *sums.get_mut(&entries[i].class_id).unwrap() += (-(d * d) / (alpha * alpha + eps)).exp();
        }
    }
    sums.into_iter().map(|(c, s)| (c, s / counts[&c] as f64)).collect()
}

pub fn brute_force_decision(scores: &BTreeMap<u32, f64>) -> u32 {
    let best = scores.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    *scores.iter().find(|(_, &s)| s == best).unwrap().0
}

pub fn gaussian_unit_f32(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

/// Central finite differences of `loss(net)` with respect to every
/// parameter.
pub fn finite_difference_grad(net: &TinyNet, h: f64, loss: impl Fn(&TinyNet) -> f64) -> Vec<f64> {
    let mut work = net.clone();
    (0..net.parameter_count())
        .map(|i| {
            let orig = work.params()[i];
            work.params_mut()[i] = orig + h;
            let up = loss(&work);
            work.params_mut()[i] = orig - h;
            let down = loss(&work);
            work.params_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> ActivationImage {
    let data = (0..w * h * c).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    ActivationImage::new(w, h, c, data, false).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Unstabilized transcription of the combined loss: one-hot cross-entropy
/// plus cross-entropy over −‖p − label_c‖/(2M).
pub fn naive_combined_loss(logits: &[f64], labels: &[(f64, f64)], p: (f64, f64), class: usize) -> f64 {
    let m = labels.len() as f64;
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    let one_hot = -(logits[class].exp() / z).ln();
    let d: Vec<f64> = labels.iter().map(|&(x, y)| ((x - p.0).powi(2) + (y - p.1).powi(2)).sqrt() / (2.0 * m)).collect();
    let zh: f64 = d.iter().map(|v| (-v).exp()).sum();
    one_hot - ((-d[class]).exp() / zh).ln()
}

/// Central differences of [`naive_combined_loss`] with respect to the
/// logits and the prediction.
pub fn naive_loss_grad(logits: &[f64], labels: &[(f64, f64)], p: (f64, f64), class: usize, h: f64) -> (Vec<f64>, [f64; 2]) {
    let f = |lg: &[f64], q: (f64, f64)| naive_combined_loss(lg, labels, q, class);
    let gl = (0..logits.len())
        .map(|i| {
            let mut up = logits.to_vec();
            let mut down = logits.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up, p) - f(&down, p)) / (2.0 * h)
        })
        .collect();
    let gp = [
        (f(logits, (p.0 + h, p.1)) - f(logits, (p.0 - h, p.1))) / (2.0 * h),
        (f(logits, (p.0, p.1 + h)) - f(logits, (p.0, p.1 - h))) / (2.0 * h),
    ];
    (gl, gp)
}

/// One randomized configuration: analytic parameter gradient of the
/// per-sample loss against central differences. Returns the relative error.
pub fn backprop_check(config: u64) -> f64 {
    let mut rng = seed::rng(config, 3000);
    let classes = rng.random_range(2..=5);
    let in_channels = rng.random_range(1..=3);
    let hue_hidden = rng.random_bool(0.5).then(|| rng.random_range(2..=6));
    let mode = if rng.random_bool(0.5) { LossMode::OnehotHue } else { LossMode::Onehot };
    let shape = NetShape { width: 4, height: 4, in_channels, classes, hue_hidden };
    let net = TinyNet::new(shape, &mut rng).unwrap();
    let image = random_image(&mut rng, 4, 4, in_channels);
    let class = rng.random_range(0..classes);
    let labels = assign_labels(classes, LabelMode::RandomPermutation, config).unwrap();

    let loss = |n: &TinyNet| {
        let out = n.forward(&image).unwrap();
        let (a, b, _, _) = sample_loss(mode, &out.logits, out.hue, &labels, class, 1.0).unwrap();
        a + b
    };
    let out = net.forward(&image).unwrap();
    let (_, _, gl, gh) = sample_loss(mode, &out.logits, out.hue, &labels, class, 1.0).unwrap();
    let analytic = net.backward(&out.cache, &gl, gh).unwrap();
    let numeric = finite_difference_grad(&net, 1e-5, loss);
    rel_err(&analytic, &numeric)
}
