use std::path::Path;

use super::{dim_u32, read_file, write_file, Reader};
use crate::error::{Error, Result};
use crate::memory::{Forest, ForestConfig, Index, MemoryStore, Node, Tree};

pub const AHIX_MAGIC: [u8; 4] = *b"AHIX";
pub const AHIX_VERSION: u32 = 1;
const MODE_EXACT: u8 = 0;
const MODE_TREE: u8 = 1;
/// Mode byte of a store saved before freezing.
pub const AHIX_UNFROZEN: u8 = 0xFF;
const TAG_LEAF: u8 = 0;
const TAG_SPLIT: u8 = 1;

/// Layout:
///
/// ```text
/// "AHIX" u32 version  u32 N  u64 count  u8 mode
/// count × { N × f32 vector, f32 x, f32 y, u32 class_id, u32 image_id }
/// mode 1 only:
///   u32 trees  u32 leaf_size  u64 seed  u64 search_k (0 = default budget)
///   per tree: u32 node_count, then per node
///     u8 0 (leaf):  u32 len, len × u32 entry index
///     u8 1 (split): N × f32 normal, f32 offset, u32 left, u32 right
/// ```
pub fn encode_ahix(store: &MemoryStore) -> Result<Vec<u8>> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let dim = store.dim();
    let mut out = Vec::with_capacity(21 + store.len() * (dim + 4) * 4);
    out.extend_from_slice(&AHIX_MAGIC);
    out.extend_from_slice(&AHIX_VERSION.to_le_bytes());
    out.extend_from_slice(&dim_u32("N", dim)?.to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    out.push(match store.index() {
        None => AHIX_UNFROZEN,
        Some(Index::Exact) => MODE_EXACT,
        Some(Index::Tree(_)) => MODE_TREE,
    });
    for i in 0..store.len() {
        for v in store.vector(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let (x, y) = store.position(i);
        out.extend_from_slice(&x.to_le_bytes());
        out.extend_from_slice(&y.to_le_bytes());
        out.extend_from_slice(&store.class_id(i).to_le_bytes());
        out.extend_from_slice(&store.image_id(i).to_le_bytes());
    }
    if let Some(Index::Tree(forest)) = store.index() {
        let c = &forest.config;
        out.extend_from_slice(&dim_u32("trees", c.trees)?.to_le_bytes());
        out.extend_from_slice(&dim_u32("leaf_size", c.leaf_size)?.to_le_bytes());
        out.extend_from_slice(&c.seed.to_le_bytes());
        out.extend_from_slice(&(c.search_k.unwrap_or(0) as u64).to_le_bytes());
        for tree in &forest.trees {
            out.extend_from_slice(&dim_u32("node count", tree.nodes.len())?.to_le_bytes());
            for node in &tree.nodes {
                match node {
                    Node::Leaf { items } => {
                        out.push(TAG_LEAF);
                        out.extend_from_slice(&dim_u32("leaf size", items.len())?.to_le_bytes());
                        for i in items {
                            out.extend_from_slice(&i.to_le_bytes());
                        }
                    }
                    Node::Split {
                        normal,
                        offset,
                        left,
                        right,
                    } => {
                        out.push(TAG_SPLIT);
                        for v in normal {
                            out.extend_from_slice(&v.to_le_bytes());
                        }
                        out.extend_from_slice(&offset.to_le_bytes());
                        out.extend_from_slice(&left.to_le_bytes());
                        out.extend_from_slice(&right.to_le_bytes());
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn decode_ahix(bytes: &[u8]) -> Result<MemoryStore> {
    let mut r = Reader::new(bytes);
    r.magic(AHIX_MAGIC)?;
    let version_at = r.offset();
    let version = r.u32()?;
    if version != AHIX_VERSION {
        return Err(Error::BadVersion {
            offset: version_at,
            found: version,
        });
    }
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(Error::InvalidDims("N = 0 at byte offset 8".into()));
    }
    let count = r.u64()?;
    if count == 0 {
        return Err(Error::EmptyStore);
    }
    let mode_at = r.offset();
    let mode = r.u8()?;
    if ![MODE_EXACT, MODE_TREE, AHIX_UNFROZEN].contains(&mode) {
        return Err(Error::Corrupt {
            offset: mode_at,
            reason: format!("unknown index mode {mode:#04x}"),
        });
    }
    // Reject absurd counts before allocating.
    let entry_len = (dim as u64 + 4) * 4;
    let remaining = (bytes.len() as u64).saturating_sub(r.offset());
    if count.saturating_mul(entry_len) > remaining {
        return Err(Error::Truncated {
            offset: bytes.len() as u64,
            needed: count.saturating_mul(entry_len) - remaining,
        });
    }
    let count = count as usize;
    let mut store = MemoryStore::new();
    for _ in 0..count {
        let at = r.offset();
        let v = r.f32s(dim)?;
        let (x, y) = (r.f32()?, r.f32()?);
        let (class_id, image_id) = (r.u32()?, r.u32()?);
        if v.iter().any(|x| !x.is_finite()) || !x.is_finite() || !y.is_finite() {
            return Err(Error::Corrupt {
                offset: at,
                reason: "non-finite entry".into(),
            });
        }
        store.insert_raw(&v, (x, y), class_id, image_id).map_err(|e| Error::Corrupt {
            offset: at,
            reason: e.to_string(),
        })?;
    }
    match mode {
        MODE_EXACT => store.set_index(Index::Exact),
        MODE_TREE => {
            let forest = decode_forest(&mut r, dim, count)?;
            store.set_index(Index::Tree(forest));
        }
        _ => {}
    }
    r.finish()?;
    Ok(store)
}

fn decode_forest(r: &mut Reader, dim: usize, count: usize) -> Result<Forest> {
    let trees_at = r.offset();
    let n_trees = r.u32()? as usize;
    if n_trees == 0 {
        return Err(Error::Corrupt {
            offset: trees_at,
            reason: "tree index with zero trees".into(),
        });
    }
    let leaf_size = r.u32()? as usize;
    let seed = r.u64()?;
    let search_k = match r.u64()? {
        0 => None,
        k => Some(k as usize),
    };
    let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
    for _ in 0..n_trees {
        let node_count = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(node_count.min(1 << 20));
        for id in 0..node_count {
            let at = r.offset();
            let bad = |reason: String| Error::Corrupt { offset: at, reason };
            match r.u8()? {
                TAG_LEAF => {
                    let len = r.u32()? as usize;
                    let items: Vec<u32> = r.take(len.saturating_mul(4))?
                        .chunks_exact(4)
                        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect();
                    if let Some(i) = items.iter().find(|&&i| i as usize >= count) {
                        return Err(bad(format!("leaf item {i} out of range for {count} entries")));
                    }
                    nodes.push(Node::Leaf { items });
                }
                TAG_SPLIT => {
                    let normal = r.f32s(dim)?;
                    let offset = r.f32()?;
                    let (left, right) = (r.u32()?, r.u32()?);
                    for child in [left, right] {
                        if child as usize <= id || child as usize >= node_count {
                            return Err(bad(format!("child {child} of node {id} out of range")));
                        }
                    }
                    nodes.push(Node::Split {
                        normal,
                        offset,
                        left,
                        right,
                    });
                }
                tag => return Err(bad(format!("unknown node tag {tag}"))),
            }
        }
        if nodes.is_empty() {
            return Err(r.corrupt("tree with no nodes"));
        }
        trees.push(Tree { nodes });
    }
    Ok(Forest {
        config: ForestConfig {
            trees: n_trees,
            leaf_size,
            search_k,
            seed,
        },
        trees,
    })
}

pub fn read_ahix(path: impl AsRef<Path>) -> Result<MemoryStore> {
    decode_ahix(&read_file(path.as_ref())?)
}

pub fn write_ahix(store: &MemoryStore, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_ahix(store)?;
    write_file(path.as_ref(), &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::IndexConfig;
    use crate::Parallelism;

    fn store(config: Option<IndexConfig>) -> MemoryStore {
        let mut s = MemoryStore::new();
        for i in 0..50u32 {
            let a = i as f64 * 0.3;
            s.insert_vector(&[a.cos(), a.sin(), 0.5], (i as f64 % 7.0 - 3.0, 1.0), i % 3, i / 5).unwrap();
        }
        if let Some(c) = config {
            s.freeze(c, Parallelism::Sequential).unwrap();
        }
        s
    }

    #[test]
    fn round_trips_every_mode() {
        let tree = IndexConfig::Tree(ForestConfig {
            trees: 3,
            leaf_size: 4,
            search_k: Some(40),
            seed: 9,
        });
        for config in [None, Some(IndexConfig::Exact), Some(tree)] {
            let s = store(config);
            let bytes = encode_ahix(&s).unwrap();
            let back = decode_ahix(&bytes).unwrap();
            assert_eq!(back, s);
            assert_eq!(encode_ahix(&back).unwrap(), bytes);
        }
        assert_eq!(encode_ahix(&store(None)).unwrap()[20], 0xFF);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_ahix(&store(Some(IndexConfig::Tree(ForestConfig {
            trees: 2,
            leaf_size: 4,
            ..Default::default()
        }))))
        .unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(decode_ahix(&bad), Err(Error::BadMagic { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_ahix(&bad), Err(Error::BadVersion { offset: 4, found: 9 })));
        let mut bad = bytes.clone();
        bad[20] = 5;
        assert!(matches!(decode_ahix(&bad), Err(Error::Corrupt { offset: 20, .. })));
        for cut in [3, 20, 100, bytes.len() - 1] {
            assert!(matches!(decode_ahix(&bytes[..cut]), Err(Error::Truncated { .. })), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad.extend_from_slice(&[0, 0]);
        assert!(matches!(decode_ahix(&bad), Err(Error::Corrupt { .. })));
        // First tree's root is a split whose left child index follows the normal.
        let entries_end = 21 + 50 * (3 + 4) * 4;
        let root = entries_end + 24 + 4;
        assert_eq!(bytes[root], TAG_SPLIT);
        let mut bad = bytes.clone();
        let left = root + 1 + 3 * 4 + 4;
        bad[left..left + 4].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_ahix(&bad), Err(Error::Corrupt { offset, .. }) if offset == root as u64));
        let mut bad = bytes;
        bad[21..25].copy_from_slice(&3f32.to_le_bytes());
        assert!(matches!(decode_ahix(&bad), Err(Error::Corrupt { offset: 21, .. })));
    }

    #[test]
    fn empty_store_cannot_be_written() {
        assert!(matches!(encode_ahix(&MemoryStore::new()), Err(Error::EmptyStore)));
    }
}
