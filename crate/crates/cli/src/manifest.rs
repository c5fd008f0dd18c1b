//! Per-command run manifests and small file helpers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use mricnn::hash::sha256_hex;
use mricnn::kv::KvConfig;
use serde::Serialize;

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// What was run, with which settings and data, producing which files.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        RunManifest {
            tool: "mricnn",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            args: std::env::args().collect(),
            config: BTreeMap::new(),
            seed: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started_unix: now(),
            finished_unix: 0,
        }
    }

    pub fn config(&mut self, kv: &KvConfig) {
        self.config = kv.clone().into_map();
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    /// Records every file under `dir` (relative paths), skipping the manifest
    /// itself.
    pub fn outputs_under(&mut self, dir: &Path) -> Result<()> {
        for path in walk(dir)? {
            let rel = path.strip_prefix(dir).unwrap_or(&path);
            if rel == Path::new(RUN_MANIFEST) {
                continue;
            }
            let key = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            self.outputs.insert(key, hash_file(&path)?);
        }
        Ok(())
    }

    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished_unix = now();
        write_json(&dir.join(RUN_MANIFEST), &self)
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Files under `dir`, sorted.
pub fn walk(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Loads `--config` when given; flags are layered on top afterwards.
pub fn base_config(path: Option<&Path>, allowed: &[&str]) -> Result<KvConfig> {
    let Some(path) = path else {
        return Ok(KvConfig::default());
    };
    let kv = KvConfig::load(path)?;
    if let Some(bad) = kv.keys().find(|k| !allowed.contains(k)) {
        anyhow::bail!(mricnn::Error::Config(format!(
            "{}: unknown key `{bad}` (known: {})",
            path.display(),
            allowed.join(", ")
        )));
    }
    Ok(kv)
}

/// Sets `key` when the flag was given.
pub fn put<T: ToString>(kv: &mut KvConfig, key: &str, value: Option<T>) {
    if let Some(v) = value {
        kv.set(key, v);
    }
}
