//! Kernel-density K-NN classification over pixel-vector matches.
//!
//! Every non-zero query pixel retrieves its K nearest memory vectors. Each
//! match contributes `exp(-d² / (α² + ε))` to its class, where α is the
//! pixel's rank-1 distance. Class totals are divided by the number of memory
//! entries of that class, and the decision is the argmax. Scores are only
//! defined up to a constant factor; only their ordering carries meaning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::activation::{pool_descriptor, unit_f32, ActivationImage, LabeledImage, PoolMode};
use crate::error::{Error, Result};
use crate::memory::{IndexConfig, MemoryStore, NNQueryResult, QueryOptions, DEFAULT_K};
use crate::par::Parallelism;

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Adaptive-bandwidth Gaussian kernel.
pub fn kernel(distance: f64, alpha: f64, epsilon: f64) -> f64 {
    (-(distance * distance) / (alpha * alpha + epsilon)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierParams {
    pub k: usize,
    pub epsilon: f64,
    pub exclude_image: Option<u32>,
    pub force_exact: bool,
    pub par: Parallelism,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            epsilon: DEFAULT_EPSILON,
            exclude_image: None,
            force_exact: false,
            par: Parallelism::default(),
        }
    }
}

impl ClassifierParams {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    fn query_options(&self) -> QueryOptions {
        QueryOptions {
            k: self.k,
            exclude_image: self.exclude_image,
            force_exact: self.force_exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLikelihoodTable {
    /// Unnormalized scores for every class present in memory.
    pub scores: BTreeMap<u32, f64>,
    pub decision: u32,
    pub epsilon: f64,
    pub k: usize,
    pub query_pixels: usize,
    pub skipped_pixels: usize,
    /// True if any pixel's K was capped by the eligible memory size.
    pub capped: bool,
}

/// Per-pixel retrieval: the pixel's neighbour list and its kernel values.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMatches {
    pub pixel: usize,
    pub result: NNQueryResult,
    pub kernels: Vec<f64>,
}

/// Retrieve and weight neighbours for each (pixel index, unit vector) pair.
pub fn match_pixels(
    queries: &[(usize, Vec<f32>)],
    store: &MemoryStore,
    params: &ClassifierParams,
) -> Result<Vec<PixelMatches>> {
    if !store.is_frozen() {
        return Err(Error::NotFrozen);
    }
    if !(params.epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {}", params.epsilon)));
    }
    let opts = params.query_options();
    params.par.try_map(queries.len(), |i| {
        let (pixel, q) = &queries[i];
        let result = store.query(q, &opts)?;
        let kernels = result
            .neighbors
            .iter()
            .map(|n| kernel(n.distance, result.alpha, params.epsilon))
            .collect();
        Ok(PixelMatches {
            pixel: *pixel,
            result,
            kernels,
        })
    })
}

/// Non-zero pixels of an image as unit 32-bit vectors, with the skip count.
pub fn unit_pixels(image: &ActivationImage) -> (Vec<(usize, Vec<f32>)>, usize) {
    let mut out = Vec::with_capacity(image.num_pixels());
    let mut skipped = 0;
    for i in 0..image.num_pixels() {
        match unit_f32(image.pixel_at(i)) {
            Ok(v) => out.push((i, v)),
            Err(_) => skipped += 1,
        }
    }
    (out, skipped)
}

/// Class likelihood table from already-normalized query vectors.
pub fn likelihood_vectors(
    queries: &[(usize, Vec<f32>)],
    store: &MemoryStore,
    params: &ClassifierParams,
) -> Result<ClassLikelihoodTable> {
    if !store.is_frozen() {
        return Err(Error::NotFrozen);
    }
    if queries.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let matches = match_pixels(queries, store, params)?;
    let mut numerators: BTreeMap<u32, f64> = store.class_counts().keys().map(|&c| (c, 0.0)).collect();
    let mut capped = false;
    // Fixed pixel-then-rank order keeps the sums independent of thread count.
    for m in &matches {
        capped |= m.result.capped;
        for (n, f) in m.result.neighbors.iter().zip(&m.kernels) {
            *numerators.entry(store.class_id(n.index)).or_insert(0.0) += f;
        }
    }
    let scores: BTreeMap<u32, f64> = numerators
        .into_iter()
        .filter_map(|(c, num)| {
            let count = store.class_count(c);
            (count > 0).then(|| (c, num / count as f64))
        })
        .collect();
    let decision = argmax(&scores).ok_or(Error::EmptyStore)?;
    Ok(ClassLikelihoodTable {
        scores,
        decision,
        epsilon: params.epsilon,
        k: params.k,
        query_pixels: queries.len(),
        skipped_pixels: 0,
        capped,
    })
}

pub fn likelihood(query: &ActivationImage, store: &MemoryStore, params: &ClassifierParams) -> Result<ClassLikelihoodTable> {
    if !store.is_frozen() {
        return Err(Error::NotFrozen);
    }
    let (pixels, skipped) = unit_pixels(query);
    let mut table = likelihood_vectors(&pixels, store, params)?;
    table.skipped_pixels = skipped;
    Ok(table)
}

pub fn classify(query: &ActivationImage, store: &MemoryStore, params: &ClassifierParams) -> Result<u32> {
    Ok(likelihood(query, store, params)?.decision)
}

/// Single-vector variant: the store holds one pooled descriptor per image.
pub fn classify_pooled(descriptor: &[f64], store: &MemoryStore, params: &ClassifierParams) -> Result<u32> {
    let norm = descriptor.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < crate::activation::ZERO_NORM {
        return Err(Error::EmptyQuery);
    }
    let q: Vec<f32> = descriptor.iter().map(|v| (v / norm) as f32).collect();
    Ok(likelihood_vectors(&[(0, q)], store, params)?.decision)
}

/// Highest score, lowest class id among exact ties.
pub fn argmax(scores: &BTreeMap<u32, f64>) -> Option<u32> {
    let mut best: Option<(u32, f64)> = None;
    for (&c, &s) in scores {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((c, s)),
        }
    }
    best.map(|(c, _)| c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Pixel,
    Pooled(PoolMode),
}

impl Encoding {
    pub const ALL: [Encoding; 4] = [
        Encoding::Pixel,
        Encoding::Pooled(PoolMode::Avg),
        Encoding::Pooled(PoolMode::Max),
        Encoding::Pooled(PoolMode::Flatten),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Encoding::Pixel => "pixel",
            Encoding::Pooled(m) => m.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingAccuracy {
    pub encoding: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Accuracy of memory-based classification per descriptor encoding:
/// pixel vectors versus one pooled descriptor per image.
pub fn descriptor_comparison(
    memory: &[LabeledImage],
    queries: &[LabeledImage],
    params: &ClassifierParams,
) -> Result<Vec<EncodingAccuracy>> {
    if queries.is_empty() {
        return Err(Error::EmptyQuery);
    }
    Encoding::ALL
        .iter()
        .map(|&encoding| {
            let mut store = MemoryStore::new();
            match encoding {
                Encoding::Pixel => {
                    for m in memory {
                        store.insert(&m.image, m.class_id, m.image_id)?;
                    }
                }
                Encoding::Pooled(mode) => {
                    for m in memory {
                        store.insert_vector(&pool_descriptor(&m.image, mode)?, (0.0, 0.0), m.class_id, m.image_id)?;
                    }
                }
            }
            store.freeze(IndexConfig::Exact, params.par)?;
            let decisions: Vec<u32> = queries
                .iter()
                .map(|q| match encoding {
                    Encoding::Pixel => classify(&q.image, &store, params),
                    Encoding::Pooled(mode) => classify_pooled(&pool_descriptor(&q.image, mode)?, &store, params),
                })
                .collect::<Result<_>>()?;
            let correct = decisions.iter().zip(queries).filter(|(d, q)| **d == q.class_id).count();
            Ok(EncodingAccuracy {
                encoding: encoding.name().to_string(),
                correct,
                total: queries.len(),
                accuracy: correct as f64 / queries.len() as f64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationImage;

    fn frozen(entries: &[(&[f64], u32)]) -> MemoryStore {
        let mut s = MemoryStore::new();
        for (i, (v, c)) in entries.iter().enumerate() {
            s.insert_vector(v, (0.0, 0.0), *c, i as u32).unwrap();
        }
        s.freeze(IndexConfig::Exact, Parallelism::Sequential).unwrap();
        s
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel(0.0, 0.3, 1e-8), 1.0);
        assert_eq!(kernel(0.0, 0.0, 1e-8), 1.0);
        assert!((kernel(0.2, 0.2, 1e-8) - 0.367879).abs() < 1e-5);
        assert!((kernel(0.4, 0.2, 1e-8) - 0.018316).abs() < 1e-5);
    }

    #[test]
    fn kernel_is_monotone_in_distance() {
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let f = kernel(i as f64 * 0.01, 0.3, 1e-8);
            assert!(f < prev);
            prev = f;
        }
    }

    #[test]
    fn identical_single_class_image_scores_one() {
        let data: Vec<f32> = (0..3 * 3 * 4).map(|i| 0.1 + (i % 7) as f32).collect();
        let img = ActivationImage::new(3, 3, 4, data, true).unwrap();
        let mut s = MemoryStore::new();
        s.insert(&img, 5, 0).unwrap();
        s.freeze(IndexConfig::Exact, Parallelism::Sequential).unwrap();
        let t = likelihood(&img, &s, &ClassifierParams::with_k(1)).unwrap();
        assert_eq!(t.scores.len(), 1);
        assert_eq!(t.scores[&5], 1.0);
        assert_eq!(t.decision, 5);
    }

    #[test]
    fn dominant_class_wins() {
        let s = frozen(&[(&[1.0, 0.05], 0), (&[0.98, 0.1], 0), (&[0.2, 1.0], 1), (&[0.1, 1.0], 1)]);
        let q = ActivationImage::new(1, 1, 2, vec![1.0, 0.0], true).unwrap();
        assert_eq!(classify(&q, &s, &ClassifierParams::with_k(2)).unwrap(), 0);
    }

    #[test]
    fn symmetric_tie_goes_to_lower_class() {
        let s = frozen(&[(&[1.0, 0.0], 4), (&[0.0, 1.0], 2)]);
        let q = ActivationImage::new(1, 1, 2, vec![1.0, 1.0], true).unwrap();
        let t = likelihood(&q, &s, &ClassifierParams::with_k(2)).unwrap();
        assert_eq!(t.scores[&2], t.scores[&4]);
        assert_eq!(t.decision, 2);
    }

    #[test]
    fn errors() {
        let mut s = MemoryStore::new();
        s.insert_vector(&[1.0, 0.0], (0.0, 0.0), 0, 0).unwrap();
        let q = ActivationImage::new(1, 1, 2, vec![1.0, 0.0], true).unwrap();
        assert!(matches!(likelihood(&q, &s, &ClassifierParams::default()), Err(Error::NotFrozen)));
        s.freeze(IndexConfig::Exact, Parallelism::Sequential).unwrap();
        let z = ActivationImage::zeros(2, 2, 2).unwrap();
        assert!(matches!(likelihood(&z, &s, &ClassifierParams::default()), Err(Error::EmptyQuery)));
    }

    #[test]
    fn zero_pixels_are_skipped_and_counted() {
        let s = frozen(&[(&[1.0, 0.0], 0), (&[0.0, 1.0], 1)]);
        let q = ActivationImage::new(2, 1, 2, vec![0.0, 0.0, 0.0, 1.0], true).unwrap();
        let t = likelihood(&q, &s, &ClassifierParams::with_k(1)).unwrap();
        assert_eq!(t.skipped_pixels, 1);
        assert_eq!(t.query_pixels, 1);
        assert_eq!(t.decision, 1);
    }

    #[test]
    fn pooled_query_equal_to_stored_descriptor() {
        let s = frozen(&[(&[0.9, 0.1, 0.0], 3), (&[0.0, 0.5, 0.5], 1), (&[0.1, 0.1, 0.9], 2)]);
        assert_eq!(classify_pooled(&[0.0, 0.5, 0.5], &s, &ClassifierParams::with_k(1)).unwrap(), 1);
        assert_eq!(classify_pooled(&[0.9, 0.1, 0.0], &s, &ClassifierParams::with_k(3)).unwrap(), 3);
    }

    #[test]
    fn argmax_tie_rule() {
        let scores: BTreeMap<u32, f64> = [(3, 0.5), (1, 0.5), (7, 0.1)].into_iter().collect();
        assert_eq!(argmax(&scores), Some(1));
        assert_eq!(argmax(&BTreeMap::new()), None);
    }
}
