//! Randomized hyperplane-split forest for approximate nearest-neighbour search.
//!
//! Each tree recursively splits its items by the hyperplane equidistant from
//! two randomly sampled items. A query walks all trees at once through a
//! shared priority queue ordered by the smallest margin seen on the path, so
//! the most promising leaves across the whole forest are opened first, until
//! a candidate budget is reached. Candidates are then re-ranked exactly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::par::Parallelism;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    /// Nodes with at most this many items become leaves.
    pub leaf_size: usize,
    /// Candidate budget per query; `None` uses `trees * k * 20`.
    pub search_k: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 32,
            leaf_size: 32,
            search_k: None,
            seed: 7,
        }
    }
}

impl ForestConfig {
    pub fn budget(&self, k: usize) -> usize {
        self.search_k.unwrap_or(self.trees * k * 20).max(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        normal: Vec<f32>,
        offset: f32,
        left: u32,
        right: u32,
    },
    Leaf {
        items: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    /// Root is node 0.
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}

impl Forest {
    /// `vectors` is the flat entry matrix (count × dim).
    pub fn build(vectors: &[f32], dim: usize, config: ForestConfig, par: Parallelism) -> Self {
        let count = vectors.len() / dim;
        let trees = par.map(config.trees, |t| {
            let mut rng = seed::rng(config.seed, seed::substream(seed::stream::FOREST, t as u64));
            let mut nodes = Vec::new();
            let items: Vec<u32> = (0..count as u32).collect();
            build_node(vectors, dim, items, config.leaf_size.max(1), &mut rng, &mut nodes);
            Tree { nodes }
        });
        Forest { config, trees }
    }

    /// Candidate entry indices for `query`, sorted and de-duplicated.
    /// `keep` filters entries (used for leave-one-out exclusion).
    pub fn candidates(&self, query: &[f32], budget: usize, keep: impl Fn(u32) -> bool) -> Vec<u32> {
        let mut heap = BinaryHeap::new();
        for t in 0..self.trees.len() {
            heap.push(Pending {
                priority: f64::INFINITY,
                tree: t as u32,
                node: 0,
            });
        }
        let mut seen = std::collections::HashSet::new();
        let mut found = Vec::with_capacity(budget + self.config.leaf_size);
        while let Some(Pending { priority, tree, node }) = heap.pop() {
            if found.len() >= budget {
                break;
            }
            match &self.trees[tree as usize].nodes[node as usize] {
                Node::Leaf { items } => {
                    for &i in items {
                        if keep(i) && seen.insert(i) {
                            found.push(i);
                        }
                    }
                }
                Node::Split {
                    normal,
                    offset,
                    left,
                    right,
                } => {
                    let m = margin(query, normal, *offset);
                    heap.push(Pending {
                        priority: priority.min(m),
                        tree,
                        node: *right,
                    });
                    heap.push(Pending {
                        priority: priority.min(-m),
                        tree,
                        node: *left,
                    });
                }
            }
        }
        found.sort_unstable();
        found
    }
}

struct Pending {
    priority: f64,
    tree: u32,
    node: u32,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap on priority; lower tree/node first among equals.
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.tree.cmp(&self.tree))
            .then_with(|| other.node.cmp(&self.node))
    }
}

fn margin(x: &[f32], normal: &[f32], offset: f32) -> f64 {
    x.iter().zip(normal).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() - offset as f64
}

fn build_node<R: Rng>(
    vectors: &[f32],
    dim: usize,
    items: Vec<u32>,
    leaf_size: usize,
    rng: &mut R,
    nodes: &mut Vec<Node>,
) -> u32 {
    let id = nodes.len() as u32;
    if items.len() <= leaf_size {
        nodes.push(Node::Leaf { items });
        return id;
    }
    nodes.push(Node::Leaf { items: Vec::new() });
    let row = |i: u32| &vectors[i as usize * dim..(i as usize + 1) * dim];

    let mut split = None;
    for _ in 0..5 {
        let a = items[rng.random_range(0..items.len())];
        let b = items[rng.random_range(0..items.len())];
        let (va, vb) = (row(a), row(b));
        let normal: Vec<f32> = va.iter().zip(vb).map(|(x, y)| x - y).collect();
        if normal.iter().all(|&v| v == 0.0) {
            continue;
        }
        let offset = (normal
            .iter()
            .zip(va.iter().zip(vb))
            .map(|(&n, (&x, &y))| n as f64 * 0.5 * (x as f64 + y as f64))
            .sum::<f64>()) as f32;
        let (left, right): (Vec<u32>, Vec<u32>) =
            items.iter().partition(|&&i| margin(row(i), &normal, offset) <= 0.0);
        if !left.is_empty() && !right.is_empty() {
            split = Some((normal, offset, left, right));
            break;
        }
    }
    let (normal, offset, left, right) = match split {
        Some(s) => s,
        None => {
            // Duplicates or an unlucky draw: split at random. The zero normal
            // gives margin 0, so queries explore both halves equally.
            let (l, r): (Vec<u32>, Vec<u32>) = items.iter().partition(|_| rng.random::<bool>());
            let (l, r) = if l.is_empty() || r.is_empty() {
                let mid = items.len() / 2;
                (items[..mid].to_vec(), items[mid..].to_vec())
            } else {
                (l, r)
            };
            (vec![0.0; dim], 0.0, l, r)
        }
    };
    let left_id = build_node(vectors, dim, left, leaf_size, rng, nodes);
    let right_id = build_node(vectors, dim, right, leaf_size, rng, nodes);
    nodes[id as usize] = Node::Split {
        normal,
        offset,
        left: left_id,
        right: right_id,
    };
    id
}
