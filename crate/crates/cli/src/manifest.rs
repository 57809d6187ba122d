use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use skipstop_core::forecast::CHECKPOINT_FORMAT_VERSION;
use skipstop_core::Error;

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    /// RFC 3339; taken from `SOURCE_DATE_EPOCH` when set so reruns are
    /// byte-identical.
    pub timestamp: String,
    pub versions: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("skipstop".to_string(), env!("CARGO_PKG_VERSION").to_string());
        versions.insert("checkpoint_format".to_string(), CHECKPOINT_FORMAT_VERSION.to_string());
        Manifest {
            command: command.to_string(),
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            timestamp: timestamp(),
            versions,
        }
    }

    pub fn write(mut self, dir: &Path) -> Result<(), Error> {
        let path = dir.join("manifest.json");
        self.outputs.push(path.clone());
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    }
}

fn timestamp() -> String {
    let secs = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs() as i64)
                .unwrap_or(0)
        });
    chrono::DateTime::from_timestamp(secs, 0)
        .unwrap_or_default()
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
