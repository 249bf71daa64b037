//! Activation tensors, pixel vectors and the per-pixel statistics built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm below which a vector counts as a dead (all-zero) activation.
pub const ZERO_NORM: f64 = 1e-12;

/// An N-channel W×H activation image, stored channel-last so each pixel
/// vector is contiguous: index = (row * W + col) * N + channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
    post_relu: bool,
}

impl ActivationImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
        post_relu: bool,
    ) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidDims(format!(
                "W={width} H={height} N={channels}; all must be positive"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(channels))
            .ok_or_else(|| Error::InvalidDims("W*H*N overflows".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidDims(format!(
                "expected {expected} values for {width}x{height}x{channels}, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("activation value at index {i}")));
        }
        if post_relu {
            if let Some(i) = data.iter().position(|&v| v < 0.0) {
                return Err(Error::InvalidDims(format!(
                    "post_relu image has negative value {} at index {i}",
                    data[i]
                )));
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            post_relu,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::new(width, height, channels, vec![0.0; width * height * channels], true)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn post_relu(&self) -> bool {
        self.post_relu
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Pixel by flat index `row * W + col`.
    pub fn pixel_at(&self, index: usize) -> &[f32] {
        let start = index * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Centered coordinates: x to the right, y up, (0, 0) at the image center.
    pub fn centered_position(&self, row: usize, col: usize) -> (f64, f64) {
        centered_position(self.width, self.height, row, col)
    }

    /// Copy of the image with pixel `index` replaced.
    pub fn with_pixel(mut self, index: usize, values: &[f32]) -> Result<Self> {
        if values.len() != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "pixel has {} channels, image has {}",
                values.len(),
                self.channels
            )));
        }
        let start = index * self.channels;
        self.data[start..start + self.channels].copy_from_slice(values);
        Self::new(self.width, self.height, self.channels, self.data, self.post_relu)
    }

    /// Pixel vectors in row-major order, tagged with their centered position.
    pub fn pixel_vectors(&self, source_image: Option<u32>, class_id: Option<u32>) -> Vec<PixelVector> {
        (0..self.num_pixels())
            .map(|i| PixelVector {
                values: self.pixel_at(i).iter().map(|&v| v as f64).collect(),
                position: centered_position(self.width, self.height, i / self.width, i % self.width),
                source_image,
                class_id,
            })
            .collect()
    }
}

/// An activation image with its class and a dataset-unique image id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: ActivationImage,
    pub class_id: u32,
    pub image_id: u32,
}

pub fn centered_position(width: usize, height: usize, row: usize, col: usize) -> (f64, f64) {
    let x = col as f64 - (width as f64 - 1.0) / 2.0;
    let y = (height as f64 - 1.0) / 2.0 - row as f64;
    (x, y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelVector {
    pub values: Vec<f64>,
    pub position: (f64, f64),
    pub source_image: Option<u32>,
    pub class_id: Option<u32>,
}

impl PixelVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            position: (0.0, 0.0),
            source_image: None,
            class_id: None,
        }
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scale `v` to unit L2 norm, keeping its position and labels.
pub fn normalize(v: &PixelVector) -> Result<PixelVector> {
    Ok(PixelVector {
        values: unit(&v.values)?,
        ..v.clone()
    })
}

/// Unit-normalized copy of a raw vector.
pub fn unit(values: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(values);
    if norm < ZERO_NORM {
        return Err(Error::ZeroVector { norm });
    }
    Ok(values.iter().map(|x| x / norm).collect())
}

/// Unit-normalize a stored activation pixel for retrieval. The norm is taken
/// in 64-bit and the result rounded to 32-bit, which is the representation
/// shared by memory entries and queries.
pub fn unit_f32(values: &[f32]) -> Result<Vec<f32>> {
    let norm = values.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm < ZERO_NORM {
        return Err(Error::ZeroVector { norm });
    }
    Ok(values.iter().map(|&x| (x as f64 / norm) as f32).collect())
}

/// Per-pixel activation energy ‖I‖².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyMap {
    pub width: usize,
    pub height: usize,
    /// Row-major.
    pub values: Vec<f64>,
}

impl EnergyMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Element-wise mean of several maps of identical shape.
    pub fn mean(maps: &[EnergyMap]) -> Result<EnergyMap> {
        let first = maps.first().ok_or_else(|| Error::InvalidDims("no energy maps".into()))?;
        let mut values = vec![0.0; first.values.len()];
        for m in maps {
            if m.width != first.width || m.height != first.height {
                return Err(Error::ShapeMismatch(format!(
                    "energy map {}x{} vs {}x{}",
                    m.width, m.height, first.width, first.height
                )));
            }
            for (acc, v) in values.iter_mut().zip(&m.values) {
                *acc += v;
            }
        }
        let n = maps.len() as f64;
        values.iter_mut().for_each(|v| *v /= n);
        Ok(EnergyMap {
            width: first.width,
            height: first.height,
            values,
        })
    }
}

pub fn energy_map(img: &ActivationImage) -> EnergyMap {
    let values = img
        .data
        .chunks_exact(img.channels)
        .map(|px| px.iter().map(|&v| (v as f64) * (v as f64)).sum())
        .collect();
    EnergyMap {
        width: img.width,
        height: img.height,
        values,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Avg,
    Max,
    Flatten,
}

impl PoolMode {
    pub const ALL: [PoolMode; 3] = [PoolMode::Avg, PoolMode::Max, PoolMode::Flatten];

    pub fn name(self) -> &'static str {
        match self {
            PoolMode::Avg => "avg",
            PoolMode::Max => "max",
            PoolMode::Flatten => "flatten",
        }
    }
}

/// Global image descriptor, unit-normalized.
pub fn pool_descriptor(img: &ActivationImage, mode: PoolMode) -> Result<Vec<f64>> {
    let n = img.channels;
    let raw: Vec<f64> = match mode {
        PoolMode::Avg => {
            let mut sum = vec![0.0f64; n];
            for px in img.data.chunks_exact(n) {
                for (s, &v) in sum.iter_mut().zip(px) {
                    *s += v as f64;
                }
            }
            let count = img.num_pixels() as f64;
            sum.into_iter().map(|s| s / count).collect()
        }
        PoolMode::Max => {
            let mut max = vec![f64::NEG_INFINITY; n];
            for px in img.data.chunks_exact(n) {
                for (m, &v) in max.iter_mut().zip(px) {
                    *m = m.max(v as f64);
                }
            }
            max
        }
        PoolMode::Flatten => img.data.iter().map(|&v| v as f64).collect(),
    };
    unit(&raw)
}
