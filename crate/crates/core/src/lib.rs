//! Task-driven scanpath simulation on synthetic bar charts.
//!
//! A rule-based (or externally hosted) cognitive controller decomposes a chart
//! question into subtasks; three reinforcement-learned gaze policies carry
//! them out on a 20x20 fixation grid; a capacity-limited memory with
//! softmax forgetting links the two. Scanpath metrics and a small command
//! layer close the loop.

pub mod chartgen;
pub mod cognitive;
pub mod commands;
pub mod error;
pub mod font;
pub mod memory;
pub mod metrics;
pub mod oculomotor;
pub mod rng;
pub mod simulator;
pub mod taskgen;
pub mod vision;

pub use error::{Error, Result};

use std::io::Write;
use std::path::Path;

/// Writes through a sibling temp file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
