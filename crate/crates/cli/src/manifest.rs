//! Run provenance embedded in every output file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub input_hash: String,
    pub seed: u64,
    pub version: String,
    /// Taken from `--timestamp` or `SOURCE_DATE_EPOCH`; never the wall clock,
    /// so reruns stay byte-identical.
    pub timestamp: Option<String>,
    /// SHA-256 over every field above except `timestamp`.
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    /// `config` is the fully resolved run configuration; it is hashed through
    /// its JSON form.
    pub fn new<C: Serialize>(
        command: &str,
        config: &C,
        input: &[u8],
        seed: u64,
        timestamp: Option<String>,
    ) -> Self {
        let config_json = serde_json::to_vec(config).expect("config serializes");
        let mut m = RunManifest {
            command: command.to_string(),
            config_hash: sha256_hex(&config_json),
            input_hash: sha256_hex(input),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp,
            hash: String::new(),
        };
        let keyed = serde_json::json!([m.command, m.config_hash, m.input_hash, m.seed, m.version]);
        m.hash = sha256_hex(keyed.to_string().as_bytes());
        m
    }

    /// First line of every CSV written by the run.
    pub fn csv_header(&self) -> String {
        format!("discval {} manifest {}", self.command, self.hash)
    }
}

/// Resolves the timestamp recorded in the manifest.
pub fn timestamp(flag: Option<String>) -> Option<String> {
    flag.or_else(|| std::env::var("SOURCE_DATE_EPOCH").ok().filter(|s| !s.is_empty()))
}

/// Output directory: `--out`, then `DISCVAL_OUT_DIR`, then the config file, then `discval-out`.
pub fn out_dir(flag: Option<PathBuf>, config: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("DISCVAL_OUT_DIR").map(PathBuf::from))
        .or(config)
        .unwrap_or_else(|| PathBuf::from("discval-out"))
}

/// JSON value with the manifest attached under `manifest`.
#[derive(Serialize)]
pub struct WithManifest<'a, T: Serialize> {
    pub manifest: &'a RunManifest,
    #[serde(flatten)]
    pub body: &'a T,
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| CliError::Write {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, manifest: &RunManifest, body: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(&WithManifest { manifest, body }).expect("output serializes");
    s.push('\n');
    write_file(path, s.as_bytes())
}

/// Writes CSV produced by `fill` behind a `# manifest` comment line.
pub fn write_csv_with_header(
    path: &Path,
    manifest: &RunManifest,
    fill: impl FnOnce(&mut Vec<u8>) -> Result<(), String>,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    writeln!(buf, "# {}", manifest.csv_header()).expect("writing to memory");
    fill(&mut buf).map_err(|e| CliError::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    write_file(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_timestamp_only() {
        let a = RunManifest::new("x", &1, b"data", 7, None);
        let b = RunManifest::new("x", &1, b"data", 7, Some("1700000000".into()));
        let c = RunManifest::new("x", &1, b"data", 8, None);
        assert_eq!(a.hash, b.hash);
        assert_ne!(a.hash, c.hash);
        assert_eq!(a.input_hash, sha256_hex(b"data"));
    }
}
