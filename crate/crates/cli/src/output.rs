//! Result files, run manifests and timing sidecars.
//!
//! A command computes all of its results in memory first. The manifest,
//! which records the configuration, inputs and the hash of every output, is
//! then written atomically, followed by the outputs themselves. Wall-clock
//! information goes to a separate `*.timing.json` so that the manifest and
//! every result stay byte-identical across reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "RERANK_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "rerank-out";

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Writes through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn pretty_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Results of one command, staged until [`commit`](Self::commit).
pub struct Run {
    command: &'static str,
    config: Value,
    inputs: Vec<Value>,
    outputs: Vec<(PathBuf, Vec<u8>)>,
    manifest_path: PathBuf,
    started_unix: f64,
    clock: Instant,
    timing: Value,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

impl Run {
    pub fn new(command: &'static str, manifest_path: PathBuf, config: Value) -> Self {
        Self {
            command,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            manifest_path,
            started_unix: unix_now(),
            clock: Instant::now(),
            timing: json!({}),
        }
    }

    pub fn manifest_path(&self) -> &Path {
        &self.manifest_path
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let hash = file_sha256(path)?;
        self.inputs
            .push(json!({"role": role, "path": path.display().to_string(), "sha256": hash}));
        Ok(())
    }

    pub fn output(&mut self, path: PathBuf, contents: impl Into<Vec<u8>>) {
        self.outputs.push((path, contents.into()));
    }

    /// Extra wall-clock details for the timing sidecar.
    pub fn timing(&mut self, key: &str, value: Value) {
        self.timing[key] = value;
    }

    fn timing_path(&self) -> PathBuf {
        let mut p = self.manifest_path.as_os_str().to_owned();
        p.push(".timing.json");
        PathBuf::from(p)
    }

    /// Writes the manifest, then every output, then the timing sidecar.
    pub fn commit(mut self) -> Result<PathBuf> {
        let outputs: Vec<Value> = self
            .outputs
            .iter()
            .map(|(p, c)| json!({"path": p.display().to_string(), "sha256": sha256_hex(c)}))
            .collect();
        let manifest = json!({
            "command": self.command,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "config": self.config,
            "inputs": self.inputs,
            "outputs": outputs,
            "timing": self.timing_path().display().to_string(),
        });
        write_atomic(&self.manifest_path, pretty_json(&manifest)?.as_bytes())?;
        for (path, contents) in &self.outputs {
            write_atomic(path, contents)?;
        }
        let timing_path = self.timing_path();
        self.timing["started_unix"] = json!(self.started_unix);
        self.timing["finished_unix"] = json!(unix_now());
        self.timing["elapsed_seconds"] = json!(self.clock.elapsed().as_secs_f64());
        write_atomic(&timing_path, pretty_json(&self.timing)?.as_bytes())?;
        Ok(self.manifest_path)
    }
}
