//! Run outputs: curve.csv, meta.json and the content hash tying them together.

use crate::config::ExperimentConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CURVE_FILE: &str = "curve.csv";
pub const META_FILE: &str = "meta.json";

/// SHA-256 of the git blob object `blob <len>\0<bytes>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()));
    h.update(bytes);
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ErrorRecord {
    /// `validation` before any compute, `compute` afterwards, `io` on output failure.
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub schema_version: u32,
    pub experiment: String,
    pub started_at: String,
    pub wall_seconds: f64,
    pub threads: usize,
    /// Resolved configuration, or null if validation failed.
    pub config: Value,
    pub curve_sha256: Option<String>,
    pub pass: bool,
    pub details: Value,
    pub error: Option<ErrorRecord>,
}

/// Writes curve.csv (if any) before meta.json, so a present meta implies a complete run.
pub fn write_run(dir: &Path, curve: Option<&[u8]>, meta: &Meta) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    if let Some(bytes) = curve {
        std::fs::write(dir.join(CURVE_FILE), bytes)?;
    }
    let mut text = serde_json::to_string_pretty(meta).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(dir.join(META_FILE), text)
}

pub fn config_echo(cfg: &ExperimentConfig) -> Value {
    serde_json::to_value(cfg).unwrap_or(Value::Null)
}
