//! Run manifests: the provenance record written next to every output.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Everything needed to reproduce a run: the exact command line, the fully
/// resolved configuration, the seed, and checksums of all inputs and outputs.
/// Two runs of the same command on the same inputs produce manifests that
/// differ only in `created_unix` — the timestamp is confined here and never
/// leaks into primary outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub toolkit_version: String,
    pub seed: u64,
    /// Resolved configuration in the `key = value` file format.
    pub config: String,
    /// Input path → `sha256:<hex>` digest.
    pub inputs: BTreeMap<String, String>,
    /// Output path → `sha256:<hex>` digest.
    pub outputs: BTreeMap<String, String>,
    /// Seconds since the Unix epoch at manifest write time.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serialization");
        text.push('\n');
        std::fs::write(path, text)
    }
}
