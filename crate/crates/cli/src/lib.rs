//! Library half of the `vpatient` binary, shared with its tests.

pub mod invariants;
pub mod script;
pub mod simulate;

use std::path::{Path, PathBuf};

/// Metrics captured live are stored beside the record.
pub fn metrics_path(record_path: &Path) -> PathBuf {
    let mut name = record_path.as_os_str().to_owned();
    name.push(".metrics.json");
    PathBuf::from(name)
}
