use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Sidecar written by every command. `argv` replays the run; the primary
/// outputs never contain timing, so a replay reproduces them byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    pub seeds: Vec<u64>,
    pub argv: Vec<String>,
    pub wall_time_secs: f64,
    pub outputs: Vec<PathBuf>,
    /// Command-specific notes (counts, skipped pixels, pass/fail).
    pub summary: serde_json::Value,
}

impl RunReport {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: Vec::new(),
            argv,
            wall_time_secs: 0.0,
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
        }
    }

    pub fn finish(mut self, elapsed: Duration, path: &Path) -> Result<()> {
        self.wall_time_secs = elapsed.as_secs_f64();
        write_json(path, &self)
    }
}

/// `--report` if given, else `<out>.run.json` next to the primary output.
pub fn report_path(out: &Path, explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push(".run.json");
            out.with_file_name(name)
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
