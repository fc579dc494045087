//! Provenance stamps shared by every written artifact: the config hash and
//! the per-command run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 of the canonical (compact, key-ordered) JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    // Round-tripping through `Value` sorts object keys.
    let v = serde_json::to_value(value).expect("config serializes");
    let canonical = serde_json::to_string(&v).expect("value serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// First line of a stamped CSV file.
pub fn hash_comment(hash: &str) -> String {
    format!("# config_hash={hash}\n")
}

/// The stamp in a CSV file's leading comment, if any.
pub fn read_csv_hash(text: &str) -> Option<String> {
    text.lines()
        .next()
        .and_then(|l| l.strip_prefix("# config_hash="))
        .map(|h| h.trim().to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub versions: Versions,
    pub wall_time_s: f64,
    /// Command-specific counts and headline numbers.
    #[serde(default)]
    pub summary: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub pulsegate: String,
    pub model_format: String,
}

impl Default for Versions {
    fn default() -> Self {
        Versions {
            pulsegate: env!("CARGO_PKG_VERSION").to_string(),
            model_format: String::from_utf8_lossy(pulsegate_tensor::MODEL_MAGIC).into_owned(),
        }
    }
}

impl RunManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path)
    }
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_key_order() {
        let a = serde_json::json!({"a": 1, "b": [1, 2]});
        let b = serde_json::json!({"b": [1, 2], "a": 1});
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(
            config_hash(&a),
            config_hash(&serde_json::json!({"a": 2, "b": [1, 2]}))
        );
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn csv_stamp_round_trip() {
        let text = hash_comment("00ff") + "a,b\n1,2\n";
        assert_eq!(read_csv_hash(&text).as_deref(), Some("00ff"));
        assert_eq!(read_csv_hash("a,b\n"), None);
    }
}
