//! Run manifests: one per command invocation, written next to its outputs.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use entronas_core::schema::Schema;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(default)]
    pub schema: Schema,
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Every setting the command ran with, defaults included.
    pub config: Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<InputDigest>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub wall_time_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub struct Recorder {
    command: String,
    started_unix_ms: u128,
    clock: Instant,
    inputs: Vec<InputDigest>,
    outputs: Vec<InputDigest>,
}

impl Recorder {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started_unix_ms: now_ms(),
            clock: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        self.inputs.push(digest(role, path, bytes));
    }

    pub fn output(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        self.outputs.push(digest(role, path, bytes));
    }

    pub fn finish(self, seed: Option<u64>, config: Value) -> RunManifest {
        RunManifest {
            schema: Schema,
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: self.inputs,
            outputs: self.outputs,
            started_unix_ms: self.started_unix_ms,
            finished_unix_ms: now_ms(),
            wall_time_s: self.clock.elapsed().as_secs_f64(),
        }
    }
}

fn digest(role: &str, path: &Path, bytes: &[u8]) -> InputDigest {
    InputDigest {
        role: role.to_string(),
        path: path.display().to_string(),
        sha256: sha256_hex(bytes),
    }
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(CliError::internal)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}
