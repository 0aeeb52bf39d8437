//! Run manifest: a key-value text file recording the effective config digest,
//! timestamps, crate versions, every produced artifact with its SHA-256, and
//! the verification verdicts.
//!
//! Stages merge into the existing manifest so a full pipeline run accumulates
//! one complete artifact listing. A config digest change resets the file list:
//! artifacts from a different configuration must not masquerade as current.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{write_err, CliError};

pub const MANIFEST_FILE: &str = "manifest";
const FORMAT_TAG: &str = "mqs-rom-manifest-v1";

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub config_sha256: String,
    pub created_utc: String,
    pub updated_utc: String,
    pub seed: u64,
    /// Free-form metrics (reduction sizes, bound constants).
    pub info: BTreeMap<String, String>,
    /// Relative artifact path -> content digest.
    pub files: BTreeMap<String, String>,
    /// Check name -> "pass" | "fail".
    pub checks: BTreeMap<String, String>,
}

impl Manifest {
    /// Loads the manifest under `out_dir`, or starts a fresh one. A stale
    /// config digest drops the recorded files and checks.
    pub fn open(out_dir: &Path, config_sha256: &str, seed: u64) -> Manifest {
        let now = timestamp();
        let mut m = read(&out_dir.join(MANIFEST_FILE)).unwrap_or_default();
        if m.config_sha256 != config_sha256 {
            m = Manifest::default();
        }
        if m.created_utc.is_empty() {
            m.created_utc = now.clone();
        }
        m.config_sha256 = config_sha256.to_string();
        m.updated_utc = now;
        m.seed = seed;
        m
    }

    /// Digests `out_dir/rel` and records it.
    pub fn record_file(&mut self, out_dir: &Path, rel: &str) -> Result<(), CliError> {
        let path = out_dir.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| {
            CliError::Config(format!("cannot digest {}: {}", path.display(), e))
        })?;
        self.files.insert(rel.to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    pub fn record_check(&mut self, name: &str, passed: bool) {
        self.checks.insert(name.to_string(), if passed { "pass" } else { "fail" }.to_string());
    }

    pub fn record_info(&mut self, key: &str, value: String) {
        self.info.insert(key.to_string(), value);
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        let mut text = String::new();
        text.push_str(&format!("format = {}\n", FORMAT_TAG));
        text.push_str(&format!("config_sha256 = {}\n", self.config_sha256));
        text.push_str(&format!("created_utc = {}\n", self.created_utc));
        text.push_str(&format!("updated_utc = {}\n", self.updated_utc));
        text.push_str(&format!("core_version = {}\n", mqs_rom_core::VERSION));
        text.push_str(&format!("cli_version = {}\n", env!("CARGO_PKG_VERSION")));
        text.push_str(&format!("seed = {}\n", self.seed));
        for (k, v) in &self.info {
            text.push_str(&format!("info {} = {}\n", k, v));
        }
        for (k, v) in &self.files {
            text.push_str(&format!("file {} = {}\n", k, v));
        }
        for (k, v) in &self.checks {
            text.push_str(&format!("check {} = {}\n", k, v));
        }
        let path = out_dir.join(MANIFEST_FILE);
        std::fs::write(&path, text).map_err(|e| write_err(&path, e))
    }
}

fn timestamp() -> String {
    chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn read(path: &Path) -> Option<Manifest> {
    let text = std::fs::read_to_string(path).ok()?;
    let mut m = Manifest::default();
    for line in text.lines() {
        let Some((key, value)) = line.split_once(" = ") else {
            continue;
        };
        match key {
            "config_sha256" => m.config_sha256 = value.to_string(),
            "created_utc" => m.created_utc = value.to_string(),
            "updated_utc" => m.updated_utc = value.to_string(),
            "seed" => m.seed = value.parse().unwrap_or(0),
            _ => {
                if let Some(name) = key.strip_prefix("info ") {
                    m.info.insert(name.to_string(), value.to_string());
                } else if let Some(name) = key.strip_prefix("file ") {
                    m.files.insert(name.to_string(), value.to_string());
                } else if let Some(name) = key.strip_prefix("check ") {
                    m.checks.insert(name.to_string(), value.to_string());
                }
            }
        }
    }
    Some(m)
}
