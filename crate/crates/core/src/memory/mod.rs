//! Labeled memory of unit pixel vectors with exact and approximate K-NN.
//!
//! Entries are stored as 32-bit unit vectors; all distances are accumulated
//! in 64-bit. Neighbours are ordered by (distance, entry index), so equal
//! distances resolve to the lower index in both search modes.

mod forest;

use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

pub use forest::{Forest, ForestConfig, Node, Tree};

use crate::activation::{unit_f32, ActivationImage};
use crate::error::{Error, Result};
use crate::par::Parallelism;

/// Fig.-2 style default: ten neighbours per query pixel.
pub const DEFAULT_K: usize = 10;
const QUERY_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    Exact,
    Tree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexConfig {
    Exact,
    Tree(ForestConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Index {
    Exact,
    Tree(Forest),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InsertStats {
    pub inserted: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NNQueryResult {
    pub neighbors: Vec<Neighbor>,
    /// Distance of the rank-1 neighbour: the adaptive kernel bandwidth.
    pub alpha: f64,
    /// Set when K exceeded the number of eligible entries.
    pub capped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryOptions {
    pub k: usize,
    /// Skip every entry from this image (leave-one-out evaluation).
    pub exclude_image: Option<u32>,
    /// Force a full scan even when a tree index exists.
    pub force_exact: bool,
}

impl QueryOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            exclude_image: None,
            force_exact: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    dim: Option<usize>,
    vectors: Vec<f32>,
    positions: Vec<(f32, f32)>,
    class_ids: Vec<u32>,
    image_ids: Vec<u32>,
    class_counts: BTreeMap<u32, usize>,
    index: Option<Index>,
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::new()
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        Self {
            dim: None,
            vectors: Vec::new(),
            positions: Vec::new(),
            class_ids: Vec::new(),
            image_ids: Vec::new(),
            class_counts: BTreeMap::new(),
            index: None,
        }
    }

    /// Append every non-zero pixel of `img`, unit-normalized, with its
    /// centered position. Dead pixels are counted, not stored.
    pub fn insert(&mut self, img: &ActivationImage, class_id: u32, image_id: u32) -> Result<InsertStats> {
        self.check_insertable(img.channels())?;
        let mut stats = InsertStats::default();
        for row in 0..img.height() {
            for col in 0..img.width() {
                match unit_f32(img.pixel(row, col)) {
                    Ok(v) => {
                        let (x, y) = img.centered_position(row, col);
                        self.push(&v, (x as f32, y as f32), class_id, image_id);
                        stats.inserted += 1;
                    }
                    Err(Error::ZeroVector { .. }) => stats.skipped += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(stats)
    }

    /// Append a single vector (e.g. a pooled descriptor) after unit-normalizing it.
    pub fn insert_vector(&mut self, values: &[f64], position: (f64, f64), class_id: u32, image_id: u32) -> Result<()> {
        self.check_insertable(values.len())?;
        // Normalize from the 64-bit values, then round once.
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < crate::activation::ZERO_NORM {
            return Err(Error::ZeroVector { norm });
        }
        let unit: Vec<f32> = values.iter().map(|v| (v / norm) as f32).collect();
        self.push(&unit, (position.0 as f32, position.1 as f32), class_id, image_id);
        Ok(())
    }

    /// Append an already-normalized entry verbatim (used when loading an index file).
    pub fn insert_raw(&mut self, values: &[f32], position: (f32, f32), class_id: u32, image_id: u32) -> Result<()> {
        self.check_insertable(values.len())?;
        let norm = values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUERY_NORM_TOL {
            return Err(Error::BadQueryNorm { norm });
        }
        self.push(values, position, class_id, image_id);
        Ok(())
    }

    fn check_insertable(&mut self, dim: usize) -> Result<()> {
        if self.index.is_some() {
            return Err(Error::FrozenStore);
        }
        match self.dim {
            Some(d) if d != dim => Err(Error::ShapeMismatch(format!(
                "store holds {d}-channel vectors, got {dim}"
            ))),
            Some(_) => Ok(()),
            None if dim == 0 => Err(Error::InvalidDims("zero-channel vector".into())),
            None => {
                self.dim = Some(dim);
                Ok(())
            }
        }
    }

    fn push(&mut self, v: &[f32], position: (f32, f32), class_id: u32, image_id: u32) {
        self.vectors.extend_from_slice(v);
        self.positions.push(position);
        self.class_ids.push(class_id);
        self.image_ids.push(image_id);
        *self.class_counts.entry(class_id).or_insert(0) += 1;
    }

    pub fn freeze(&mut self, config: IndexConfig, par: Parallelism) -> Result<()> {
        if self.index.is_some() {
            return Err(Error::FrozenStore);
        }
        if self.is_empty() {
            return Err(Error::EmptyStore);
        }
        let index = match config {
            IndexConfig::Exact => Index::Exact,
            IndexConfig::Tree(fc) => {
                if fc.trees == 0 {
                    return Err(Error::Config("tree index needs at least one tree".into()));
                }
                Index::Tree(Forest::build(&self.vectors, self.dim(), fc, par))
            }
        };
        self.index = Some(index);
        Ok(())
    }

    /// Install a previously built index (file loading).
    pub(crate) fn set_index(&mut self, index: Index) {
        self.index = Some(index);
    }

    pub fn is_frozen(&self) -> bool {
        self.index.is_some()
    }

    pub fn index(&self) -> Option<&Index> {
        self.index.as_ref()
    }

    pub fn mode(&self) -> Option<IndexMode> {
        self.index.as_ref().map(|i| match i {
            Index::Exact => IndexMode::Exact,
            Index::Tree(_) => IndexMode::Tree,
        })
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    /// Channel count; 0 for an empty store.
    pub fn dim(&self) -> usize {
        self.dim.unwrap_or(0)
    }

    pub fn vector(&self, index: usize) -> &[f32] {
        let d = self.dim();
        &self.vectors[index * d..(index + 1) * d]
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn position(&self, index: usize) -> (f32, f32) {
        self.positions[index]
    }

    pub fn class_id(&self, index: usize) -> u32 {
        self.class_ids[index]
    }

    pub fn image_id(&self, index: usize) -> u32 {
        self.image_ids[index]
    }

    pub fn class_counts(&self) -> &BTreeMap<u32, usize> {
        &self.class_counts
    }

    pub fn class_count(&self, class_id: u32) -> usize {
        self.class_counts.get(&class_id).copied().unwrap_or(0)
    }

    /// Squared L2 distance between a query and an entry, accumulated in 64-bit.
    pub fn distance_sq(&self, query: &[f32], index: usize) -> f64 {
        self.vector(index)
            .iter()
            .zip(query)
            .map(|(&m, &q)| {
                let d = q as f64 - m as f64;
                d * d
            })
            .sum()
    }

    pub fn query_knn(&self, query: &[f32], k: usize) -> Result<NNQueryResult> {
        self.query(query, &QueryOptions::new(k))
    }

    pub fn query(&self, query: &[f32], opts: &QueryOptions) -> Result<NNQueryResult> {
        let index = self.index.as_ref().ok_or(Error::NotFrozen)?;
        if opts.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if query.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "query has {} channels, store has {}",
                query.len(),
                self.dim()
            )));
        }
        let norm = query.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= QUERY_NORM_TOL) {
            return Err(Error::BadQueryNorm { norm });
        }
        let keep = |i: usize| opts.exclude_image.is_none_or(|ex| self.image_ids[i] != ex);

        let mut top = TopK::new(opts.k);
        let eligible = match index {
            Index::Tree(forest) if !opts.force_exact => {
                let budget = forest.config.budget(opts.k);
                let candidates = forest.candidates(query, budget, |i| keep(i as usize));
                for &i in &candidates {
                    top.offer(self.distance_sq(query, i as usize), i as usize);
                }
                // The forest may open fewer than K items only when few are eligible.
                if candidates.len() < opts.k {
                    (0..self.len()).filter(|&i| keep(i)).count()
                } else {
                    candidates.len()
                }
            }
            _ => {
                let mut eligible = 0;
                for i in 0..self.len() {
                    if keep(i) {
                        eligible += 1;
                        top.offer(self.distance_sq(query, i), i);
                    }
                }
                eligible
            }
        };
        if eligible == 0 {
            return Err(Error::EmptyStore);
        }
        let neighbors: Vec<Neighbor> = top
            .into_sorted()
            .into_iter()
            .map(|(d2, index)| Neighbor {
                index,
                distance: d2.sqrt(),
            })
            .collect();
        Ok(NNQueryResult {
            alpha: neighbors[0].distance,
            capped: opts.k > eligible,
            neighbors,
        })
    }
}

/// Bounded max-heap keeping the K smallest (distance², index) pairs.
struct TopK {
    k: usize,
    heap: BinaryHeap<Key>,
}

#[derive(PartialEq)]
struct Key(f64, usize);
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, d2: f64, index: usize) {
        let key = Key(d2, index);
        if self.heap.len() < self.k {
            self.heap.push(key);
        } else if let Some(worst) = self.heap.peek() {
            if key < *worst {
                self.heap.pop();
                self.heap.push(key);
            }
        }
    }

    fn into_sorted(self) -> Vec<(f64, usize)> {
        self.heap.into_sorted_vec().into_iter().map(|Key(d, i)| (d, i)).collect()
    }
}
