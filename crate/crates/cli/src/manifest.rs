use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Record of one command invocation, written once per run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Every input that shaped the run: config files, flags, checkpoints.
    pub config: serde_json::Value,
    pub artifacts: Vec<PathBuf>,
    pub started_unix: f64,
    pub wall_seconds: f64,
    /// Command-specific results.
    pub summary: serde_json::Value,
}

pub struct Timer {
    started_unix: f64,
    start: Instant,
}

impl Timer {
    pub fn start() -> Self {
        Self {
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
            start: Instant::now(),
        }
    }

    pub fn finish(
        &self,
        command: &str,
        seed: Option<u64>,
        config: serde_json::Value,
        artifacts: Vec<PathBuf>,
        summary: serde_json::Value,
    ) -> RunManifest {
        RunManifest {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config,
            artifacts,
            started_unix: self.started_unix,
            wall_seconds: self.start.elapsed().as_secs_f64(),
            summary,
        }
    }
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join(RUN_MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
