//! Output directory handling and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a Value,
    config_sha256: String,
    seeds: &'a [u64],
    inputs: BTreeMap<String, String>,
    outputs: &'a [String],
    versions: BTreeMap<&'static str, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Directory receiving every output of one command. Refuses to overwrite
/// any of the command's inputs.
pub struct RunDir {
    root: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path, inputs: &[PathBuf]) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let mut all = Vec::new();
        for p in inputs {
            let meta = fs::metadata(p).with_context(|| format!("reading {}", p.display()))?;
            if meta.is_dir() {
                for entry in fs::read_dir(p)? {
                    let path = entry?.path();
                    if path.is_file() {
                        all.push(path);
                    }
                }
            } else {
                all.push(p.clone());
            }
        }
        all.sort();
        all.dedup();
        Ok(RunDir {
            root: root.to_path_buf(),
            inputs: all,
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn guard(&self, target: &Path) -> Result<()> {
        let Ok(t) = fs::canonicalize(target) else {
            return Ok(());
        };
        for input in &self.inputs {
            if fs::canonicalize(input).is_ok_and(|i| i == t) {
                bail!("refusing to overwrite input file {}", input.display());
            }
        }
        Ok(())
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let target = self.root.join(rel);
        self.guard(&target)?;
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&target, contents).with_context(|| format!("writing {}", target.display()))?;
        self.record(rel);
        Ok(())
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text)
    }

    /// Registers a file written by other code (e.g. a checkpoint).
    pub fn record(&mut self, rel: &str) {
        if !self.outputs.iter().any(|o| o == rel) {
            self.outputs.push(rel.to_string());
        }
    }

    /// Writes `manifest.json` with the effective config, its hash, the
    /// seeds, input hashes and crate versions.
    pub fn finish(mut self, command: &str, config: &Value, seeds: &[u64]) -> Result<()> {
        let mut inputs = BTreeMap::new();
        for p in &self.inputs {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            inputs.insert(p.display().to_string(), sha256_hex(&bytes));
        }
        self.outputs.sort();
        let mut versions = BTreeMap::new();
        versions.insert("ordfree-cli", env!("CARGO_PKG_VERSION").to_string());
        versions.insert("ordfree-core", ordfree_core::VERSION.to_string());
        versions.insert("ordfree-nn", ordfree_nn::VERSION.to_string());
        versions.insert("checkpoint-format", ordfree_nn::autodiff::CHECKPOINT_VERSION.to_string());
        let manifest = Manifest {
            command,
            config,
            config_sha256: sha256_hex(serde_json::to_string(config)?.as_bytes()),
            seeds,
            inputs,
            outputs: &self.outputs,
            versions,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let target = self.root.join(MANIFEST_FILE);
        self.guard(&target)?;
        fs::write(&target, text)?;
        Ok(())
    }
}
