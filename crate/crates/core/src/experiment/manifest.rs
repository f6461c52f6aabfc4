//! Run manifest: what was run, how long each stage took, what was written.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::io::{atomic_write, sha256_file};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the run directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    /// Noise and Mehler streams.
    pub noise: u64,
    /// Bootstrap resampling.
    pub bootstrap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub seeds: Seeds,
    pub started: String,
    pub finished: String,
    pub stages: Vec<StageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    pub outputs: Vec<OutputFile>,
    pub config: String,
}

impl RunManifest {
    pub fn stage_seconds(&self, name: &str) -> Option<f64> {
        self.stages.iter().find(|s| s.name == name).map(|s| s.seconds)
    }

    /// Inventories `dir` (manifest excluded) and writes `manifest.json`
    /// atomically.
    pub fn finish(&mut self, dir: &Path) -> std::io::Result<()> {
        self.finished = timestamp();
        let mut outputs = Vec::new();
        let mut names: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(Result::ok)
            .filter(|e| e.path().is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n != MANIFEST && !n.ends_with(".tmp"))
            .collect();
        names.sort();
        for name in names {
            let p = dir.join(&name);
            outputs.push(OutputFile {
                bytes: std::fs::metadata(&p)?.len(),
                sha256: sha256_file(&p)?,
                path: name,
            });
        }
        self.outputs = outputs;
        let json = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        atomic_write(&dir.join(MANIFEST), &json)
    }
}

pub const MANIFEST: &str = "manifest.json";

/// UTC time with millisecond precision, usable in a file name.
pub fn timestamp() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string()
}

/// Times named stages and remembers the first failure.
#[derive(Debug, Default)]
pub struct StageClock {
    pub records: Vec<StageRecord>,
}

pub type StageResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

impl StageClock {
    pub fn run<T>(&mut self, name: &str, f: impl FnOnce() -> StageResult<T>) -> Result<T, String> {
        let start = Instant::now();
        let out = f();
        let seconds = start.elapsed().as_secs_f64();
        match out {
            Ok(v) => {
                self.records.push(StageRecord {
                    name: name.into(),
                    seconds,
                    ok: true,
                    error: None,
                });
                Ok(v)
            }
            Err(e) => {
                let msg = e.to_string();
                self.records.push(StageRecord {
                    name: name.into(),
                    seconds,
                    ok: false,
                    error: Some(msg.clone()),
                });
                Err(msg)
            }
        }
    }

    pub fn failed(&self) -> Option<&StageRecord> {
        self.records.iter().find(|r| !r.ok)
    }
}
