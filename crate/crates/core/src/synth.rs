//! Synthetic datasets with planted angular class structure.
//!
//! Two generators share one idea: class c owns an angle θ*_c, and its
//! class-specific signal sits in a Gaussian blob at radius r and angle
//! θ*_c (plus jitter) about the image center.
//!
//! * [`generate_activations`] builds bottleneck-like activation images:
//!   a smooth position code shared by all classes, plus a class code inside
//!   the blob, plus rectified noise. Used by the retrieval experiments.
//! * [`generate_images`] builds small RGB-like input images for the trainer.
//!   The blob's colour has RGB hue θ*_c, so class identity is carried both
//!   by chromatic hue and by spatial angle.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activation::{ActivationImage, LabeledImage};
use crate::error::{Error, Result};
use crate::hue_plane::HuePlaneBasis;
use crate::seed;

/// θ*_c = offset + 2πc/M.
pub fn planted_angles(classes: usize, offset: f64) -> Vec<f64> {
    (0..classes).map(|c| crate::geometry::wrap_angle(offset + TAU * c as f64 / classes as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Blob center distance from the image center (pixels).
    pub radius: f64,
    pub blob_sigma: f64,
    /// Std-dev of the per-sample angular jitter (radians).
    pub angle_jitter: f64,
    /// Half-width of the uniform per-sample jitter of the blob radius.
    pub radius_jitter: f64,
    pub angle_offset: f64,
    pub position_weight: f64,
    pub class_weight: f64,
    pub noise: f64,
    /// Spatial scale of the position code's random Fourier features.
    pub position_bandwidth: f64,
    /// Class-independent clutter blobs per image, placed uniformly at
    /// random with a code drawn from a shared pool.
    pub distractors: usize,
    pub distractor_pool: usize,
    pub distractor_weight: f64,
}

impl Default for ActivationSynthSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            per_class: 80,
            width: 7,
            height: 7,
            channels: 32,
            radius: 2.0,
            blob_sigma: 0.8,
            angle_jitter: 0.15,
            radius_jitter: 0.75,
            angle_offset: PI / 8.0,
            position_weight: 0.0,
            class_weight: 4.0,
            noise: 0.2,
            position_bandwidth: 0.6,
            distractors: 2,
            distractor_pool: 16,
            distractor_weight: 4.0,
        }
    }
}

impl ActivationSynthSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::BadClassCount(self.classes));
        }
        if self.per_class == 0 || self.width == 0 || self.height == 0 || self.channels == 0 {
            return Err(Error::Config(format!("degenerate synthetic activation spec {self:?}")));
        }
        Ok(())
    }
}

/// Class-major list of activation images; image ids run 0.. in order.
pub fn generate_activations(spec: &ActivationSynthSpec, seed_value: u64) -> Result<Vec<LabeledImage>> {
    spec.validate()?;
    let mut rng = seed::rng(seed_value, seed::stream::SYNTH);
    let n = spec.channels;
    // Shared position code: rectified random Fourier features.
    let freqs: Vec<(f64, f64, f64)> = (0..n)
        .map(|_| {
            let wx: f64 = rng.sample::<f64, _>(StandardNormal) * spec.position_bandwidth;
            let wy: f64 = rng.sample::<f64, _>(StandardNormal) * spec.position_bandwidth;
            (wx, wy, rng.random::<f64>() * TAU)
        })
        .collect();
    // Sparse non-negative codes for classes and clutter.
    let mut sparse_code = || -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(4)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        raw.into_iter().map(|v| v / norm).collect()
    };
    let codes: Vec<Vec<f64>> = (0..spec.classes).map(|_| sparse_code()).collect();
    let clutter: Vec<Vec<f64>> = (0..spec.distractor_pool).map(|_| sparse_code()).collect();
    let half_w = spec.width as f64 / 2.0;
    let half_h = spec.height as f64 / 2.0;
    let angles = planted_angles(spec.classes, spec.angle_offset);
    let jitter = Normal::new(0.0, spec.angle_jitter.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;

    let mut out = Vec::with_capacity(spec.classes * spec.per_class);
    for (c, code) in codes.iter().enumerate() {
        for _ in 0..spec.per_class {
            let theta = angles[c] + jitter.sample(&mut rng);
            let radius = if spec.radius_jitter > 0.0 {
                spec.radius + rng.random_range(-spec.radius_jitter..spec.radius_jitter)
            } else {
                spec.radius
            };
            let (bx, by) = (radius * theta.cos(), radius * theta.sin());
            let distractors: Vec<(f64, f64, usize)> = if clutter.is_empty() {
                Vec::new()
            } else {
                (0..spec.distractors)
                    .map(|_| {
                        (
                            rng.random_range(-half_w..half_w),
                            rng.random_range(-half_h..half_h),
                            rng.random_range(0..clutter.len()),
                        )
                    })
                    .collect()
            };
            let bump = |x: f64, y: f64, cx: f64, cy: f64| {
                (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * spec.blob_sigma.powi(2))).exp()
            };
            let mut data = Vec::with_capacity(spec.width * spec.height * n);
            for row in 0..spec.height {
                for col in 0..spec.width {
                    let (x, y) = crate::activation::centered_position(spec.width, spec.height, row, col);
                    let blob = bump(x, y, bx, by);
                    let bumps: Vec<(f64, usize)> = distractors.iter().map(|&(dx, dy, d)| (bump(x, y, dx, dy), d)).collect();
                    // Energy falls off away from the center.
                    let envelope = 0.5 + (-(x * x + y * y) / (2.0 * 9.0)).exp();
                    for k in 0..n {
                        let (wx, wy, phase) = freqs[k];
                        let pos = (wx * x + wy * y + phase).cos().max(0.0);
                        let noise: f64 = rng.sample::<f64, _>(StandardNormal) * spec.noise;
                        let extra: f64 = bumps.iter().map(|&(b, d)| b * clutter[d][k]).sum();
                        let v = envelope
                            * (spec.position_weight * pos + spec.class_weight * blob * code[k] + spec.distractor_weight * extra)
                            + noise;
                        data.push(v.max(0.0) as f32);
                    }
                }
            }
            let image_id = out.len() as u32;
            out.push(LabeledImage {
                image: ActivationImage::new(spec.width, spec.height, n, data, true)?,
                class_id: c as u32,
                image_id,
            });
        }
    }
    Ok(out)
}

/// Split a class-major dataset into (memory, queries): the first
/// `memory_per_class` images of each class go to memory.
pub fn split_per_class(images: &[LabeledImage], memory_per_class: usize) -> (Vec<LabeledImage>, Vec<LabeledImage>) {
    let mut seen = std::collections::BTreeMap::new();
    let (mut memory, mut queries) = (Vec::new(), Vec::new());
    for img in images {
        let n = seen.entry(img.class_id).or_insert(0usize);
        if *n < memory_per_class {
            memory.push(img.clone());
        } else {
            queries.push(img.clone());
        }
        *n += 1;
    }
    (memory, queries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub radius: f64,
    pub blob_sigma: f64,
    pub angle_jitter: f64,
    pub angle_offset: f64,
    /// Std-dev of additive Gaussian background noise.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            per_class: 100,
            width: 16,
            height: 16,
            channels: 3,
            radius: 4.5,
            blob_sigma: 1.5,
            angle_jitter: 0.1,
            angle_offset: PI / 8.0,
            noise: 0.05,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::BadClassCount(self.classes));
        }
        if self.per_class == 0 || self.width < 2 || self.height < 2 || self.channels == 0 {
            return Err(Error::Config(format!("degenerate synthetic image spec {self:?}")));
        }
        let angles = planted_angles(self.classes, self.angle_offset);
        for i in 0..angles.len() {
            for j in 0..i {
                if crate::geometry::angle_distance(angles[i], angles[j]) < 1e-9 {
                    return Err(Error::Config("planted angles must be distinct".into()));
                }
            }
        }
        Ok(())
    }

    pub fn planted_angles(&self) -> Vec<f64> {
        planted_angles(self.classes, self.angle_offset)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub images: Vec<ActivationImage>,
    pub labels: Vec<u32>,
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Blob colour for a class: a point of RGB hue `theta` (for 3 channels), or
/// a plain unit intensity for other channel counts.
fn blob_colour(channels: usize, theta: f64) -> Vec<f64> {
    if channels == 3 {
        let plane = HuePlaneBasis::rgb();
        (0..3)
            .map(|i| 0.5 + 0.4 * (theta.cos() * plane.b1()[i] + theta.sin() * plane.b2()[i]))
            .collect()
    } else {
        vec![1.0; channels]
    }
}

/// Class-major input images for the trainer.
pub fn generate_images(spec: &SynthSpec, seed_value: u64) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = seed::rng(seed_value, seed::stream::SYNTH);
    let angles = spec.planted_angles();
    let jitter = Normal::new(0.0, spec.angle_jitter.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut images = Vec::with_capacity(spec.classes * spec.per_class);
    let mut labels = Vec::with_capacity(images.capacity());
    for (c, &angle) in angles.iter().enumerate() {
        let colour = blob_colour(spec.channels, angle);
        for _ in 0..spec.per_class {
            let theta = angle + jitter.sample(&mut rng);
            let (bx, by) = (spec.radius * theta.cos(), spec.radius * theta.sin());
            let mut data = Vec::with_capacity(spec.width * spec.height * spec.channels);
            for row in 0..spec.height {
                for col in 0..spec.width {
                    let (x, y) = crate::activation::centered_position(spec.width, spec.height, row, col);
                    let blob = (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * spec.blob_sigma.powi(2))).exp();
                    for &tint in &colour {
                        let noise = if spec.noise > 0.0 {
                            rng.sample::<f64, _>(StandardNormal) * spec.noise
                        } else {
                            0.0
                        };
                        data.push((blob * tint + noise) as f32);
                    }
                }
            }
            images.push(ActivationImage::new(spec.width, spec.height, spec.channels, data, false)?);
            labels.push(c as u32);
        }
    }
    Ok(SynthDataset {
        spec: spec.clone(),
        images,
        labels,
    })
}

/// (query position, match position) pairs whose displacement has std-dev
/// `sigma_tangential` across and `sigma_radial` along the center→query ray.
/// Query positions are pixel centers of a W×H grid, excluding the center.
pub fn planted_displacements(
    count: usize,
    sigma_tangential: f64,
    sigma_radial: f64,
    width: usize,
    height: usize,
    seed_value: u64,
) -> Vec<((f64, f64), (f64, f64))> {
    let mut rng = seed::rng(seed_value, seed::stream::SYNTH);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let row = rng.random_range(0..height);
        let col = rng.random_range(0..width);
        let (qx, qy) = crate::activation::centered_position(width, height, row, col);
        let r = qx.hypot(qy);
        if r < 1e-12 {
            continue;
        }
        let (ux, uy) = (qx / r, qy / r);
        let dr: f64 = rng.sample::<f64, _>(StandardNormal) * sigma_radial;
        let dt: f64 = rng.sample::<f64, _>(StandardNormal) * sigma_tangential;
        out.push(((qx, qy), (qx + dr * ux - dt * uy, qy + dr * uy + dt * ux)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{angle_distance, circular_mean_points};

    #[test]
    fn activation_dataset_shape_and_balance() {
        let spec = ActivationSynthSpec {
            per_class: 3,
            ..Default::default()
        };
        let d = generate_activations(&spec, 1).unwrap();
        assert_eq!(d.len(), 24);
        for c in 0..8 {
            assert_eq!(d.iter().filter(|i| i.class_id == c).count(), 3);
        }
        assert!(d.iter().all(|i| i.image.post_relu() && i.image.channels() == 32));
        assert_eq!(d, generate_activations(&spec, 1).unwrap());
        assert_ne!(d, generate_activations(&spec, 2).unwrap());
    }

    #[test]
    fn image_dataset_counts_and_determinism() {
        let d = generate_images(&SynthSpec::default(), 5).unwrap();
        assert_eq!(d.len(), 800);
        for c in 0..8 {
            assert_eq!(d.labels.iter().filter(|&&l| l == c).count(), 100);
        }
        let again = generate_images(&SynthSpec::default(), 5).unwrap();
        assert_eq!(d.images, again.images);
        let bytes = |ds: &SynthDataset| -> Vec<u8> {
            ds.images.iter().flat_map(|i| i.data().iter().flat_map(|v| v.to_le_bytes())).collect()
        };
        assert_eq!(bytes(&d), bytes(&again));
    }

    #[test]
    fn noiseless_blobs_recover_planted_angles() {
        let spec = SynthSpec {
            noise: 0.0,
            ..Default::default()
        };
        let d = generate_images(&spec, 3).unwrap();
        for (c, &theta) in spec.planted_angles().iter().enumerate() {
            let mut pts = Vec::new();
            let mut weights = Vec::new();
            for (img, _) in d.images.iter().zip(&d.labels).filter(|(_, &l)| l == c as u32) {
                for row in 0..img.height() {
                    for col in 0..img.width() {
                        pts.push(img.centered_position(row, col));
                        weights.push(img.pixel(row, col).iter().map(|&v| v as f64).sum());
                    }
                }
            }
            let s = circular_mean_points(&pts, Some(&weights)).unwrap();
            let err = angle_distance(s.mean_angle.unwrap(), theta);
            assert!(err < 1f64.to_radians(), "class {c}: {} deg", err.to_degrees());
        }
    }

    #[test]
    fn spec_validation() {
        let bad = SynthSpec {
            classes: 1,
            ..Default::default()
        };
        assert!(matches!(generate_images(&bad, 0), Err(Error::BadClassCount(1))));
    }

    #[test]
    fn planted_displacements_are_tangential() {
        let pairs = planted_displacements(2000, 1.0, 0.0, 7, 7, 4);
        let v = crate::geometry::radial_tangential_pairs(&pairs);
        assert!(v.sigma_r2 < 1e-20);
        assert!(v.sigma_t2 > 0.5);
        assert_eq!(v.skipped_center, 0);
    }
}
