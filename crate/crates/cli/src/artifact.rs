//! Artifact bookkeeping: every output file is registered and listed in a
//! manifest carrying enough provenance (config hash, seed, versions) to
//! re-run bit-identically.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Version stamp of every JSON artifact schema emitted by this binary.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    experiment: &'a str,
    config_sha256: &'a str,
    seed: u64,
    package_version: &'static str,
    artifacts: Vec<String>,
}

/// Collects artifact files under one output directory and finishes with a
/// `manifest.json` naming all of them.
pub struct ArtifactSink {
    dir: PathBuf,
    files: Vec<String>,
}

impl ArtifactSink {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Write one artifact file and register it.
    pub fn write(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        std::fs::write(self.dir.join(name), content)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Serialize a JSON artifact (pretty, deterministic field order).
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Runtime(format!("serializing {name}: {e}")))?;
        self.write(name, &(text + "\n"))
    }

    /// Write the manifest; consumes the sink so nothing is added afterwards.
    pub fn finish(mut self, experiment: &str, config_bytes: &[u8], seed: u64) -> Result<(), CliError> {
        self.files.sort();
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            experiment,
            config_sha256: &hex_digest(config_bytes),
            seed,
            package_version: env!("CARGO_PKG_VERSION"),
            artifacts: self.files.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Runtime(format!("serializing manifest: {e}")))?;
        std::fs::write(self.dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic shortest-round-trip float formatting for CSV cells.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        v.to_string()
    }
}
