use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_ahue, read_file, write_file};
use crate::activation::LabeledImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub class_id: u32,
    pub image_id: u32,
}

/// Records with paths resolved against `root` (the manifest's directory).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = String::from_utf8(read_file(path)?).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        line: 0,
        reason: format!("not UTF-8: {e}"),
    })?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let mut rec: ManifestRecord = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        if rec.path.is_relative() {
            rec.path = root.join(&rec.path);
        }
        if !rec.path.is_file() {
            return Err(fail(format!("file {} does not exist", rec.path.display())));
        }
        if !seen.insert(rec.image_id) {
            return Err(fail(format!("duplicate image_id {}", rec.image_id)));
        }
        records.push(rec);
    }
    Ok(Manifest { root, records })
}

/// One JSON object per line; paths are written as given.
pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?);
        out.push('\n');
    }
    write_file(path.as_ref(), out.as_bytes())
}

pub fn load_images(manifest: &Manifest) -> Result<Vec<LabeledImage>> {
    manifest
        .records
        .iter()
        .map(|r| {
            Ok(LabeledImage {
                image: read_ahue(&r.path)?,
                class_id: r.class_id,
                image_id: r.image_id,
            })
        })
        .collect()
}
