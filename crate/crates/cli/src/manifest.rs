//! Run manifest: what was run and a digest of every emitted file. It holds
//! no timestamps or host details, so reruns reproduce it byte for byte.

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Digest of the configuration file as read.
    pub config_sha256: String,
    /// Digest of the effective configuration after flag overrides.
    pub effective_config_sha256: String,
    pub seed: u64,
    pub n_paths: u64,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl FileEntry {
    pub fn new(name: &str, content: &[u8]) -> Self {
        Self { name: name.to_string(), bytes: content.len(), sha256: sha256_hex(content) }
    }
}

impl Manifest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s.into_bytes()
    }
}
