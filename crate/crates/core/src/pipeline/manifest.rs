//! Run manifests: a JSON record of what a pipeline run read, wrote, and
//! produced, with sha256 checksums for every artifact. The manifest is
//! rewritten after every stage, so a failed run leaves behind the state of
//! everything that completed. Timestamps live in dedicated fields that
//! comparisons strip, letting two runs of the same config be checked for
//! checksum equality.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::llm::GenerationStats;

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn now_unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct StageRecord {
    pub stage: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    /// label -> sha256 of the file read
    pub inputs: BTreeMap<String, String>,
    /// label -> sha256 of the file written
    pub outputs: BTreeMap<String, String>,
    /// free-form counters and decisions worth keeping
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl StageRecord {
    pub fn new(stage: &str) -> Self {
        StageRecord {
            stage: stage.to_string(),
            started_unix_ms: now_unix_ms(),
            finished_unix_ms: 0,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            notes: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, label: &str, path: impl AsRef<Path>) -> Result<()> {
        self.inputs.insert(label.to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, label: &str, path: impl AsRef<Path>) -> Result<()> {
        self.outputs.insert(label.to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        let value = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.notes.insert(key.to_string(), value);
    }

    fn finish(&mut self) {
        self.finished_unix_ms = now_unix_ms();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunManifest {
    pub code_version: String,
    pub created_unix_ms: u64,
    /// Snapshot of the experiment config the run started from.
    pub config: serde_json::Value,
    pub stages: Vec<StageRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation_stats: Option<GenerationStats>,
    /// Set when a stage failed; names the stage.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(config: serde_json::Value) -> Self {
        RunManifest {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix_ms: now_unix_ms(),
            config,
            stages: Vec::new(),
            generation_stats: None,
            error: None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Every checksum in the manifest, keyed `stage/(in|out)/label`. Two
    /// runs of one config should agree on this map exactly.
    pub fn checksums(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for stage in &self.stages {
            for (label, sum) in &stage.inputs {
                out.insert(format!("{}/in/{label}", stage.stage), sum.clone());
            }
            for (label, sum) in &stage.outputs {
                out.insert(format!("{}/out/{label}", stage.stage), sum.clone());
            }
        }
        out
    }

    /// The manifest as JSON with every timestamp removed, for equality
    /// checks between runs.
    pub fn comparable(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).unwrap_or(serde_json::Value::Null);
        strip_timestamps(&mut value);
        value
    }
}

fn strip_timestamps(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("unix-ms"));
            for v in map.values_mut() {
                strip_timestamps(v);
            }
        }
        serde_json::Value::Array(items) => {
            for v in items {
                strip_timestamps(v);
            }
        }
        _ => {}
    }
}

/// Drives a run: executes stages in order, appends their records, and
/// rewrites the manifest file after every stage so failures leave evidence.
pub struct Runner {
    manifest: RunManifest,
    path: std::path::PathBuf,
}

impl Runner {
    pub fn new(path: impl Into<std::path::PathBuf>, config: serde_json::Value) -> Result<Self> {
        let runner = Runner {
            manifest: RunManifest::new(config),
            path: path.into(),
        };
        runner.manifest.save(&runner.path)?;
        Ok(runner)
    }

    pub fn stage<T>(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut StageRecord) -> Result<T>,
    ) -> Result<T> {
        let mut record = StageRecord::new(name);
        let outcome = body(&mut record);
        record.finish();
        self.manifest.stages.push(record);
        match outcome {
            Ok(value) => {
                self.manifest.save(&self.path)?;
                Ok(value)
            }
            Err(e) => {
                self.manifest.error = Some(format!("stage {name} failed: {e}"));
                self.manifest.save(&self.path)?;
                Err(e.in_stage(name))
            }
        }
    }

    pub fn set_generation_stats(&mut self, stats: GenerationStats) {
        self.manifest.generation_stats = Some(stats);
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn finish(self) -> Result<RunManifest> {
        self.manifest.save(&self.path)?;
        Ok(self.manifest)
    }
}
