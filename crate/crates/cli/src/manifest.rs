use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Everything needed to rerun a command: the exact arguments, the resolved
/// config and the code version.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub code_version: &'static str,
    pub config_path: PathBuf,
    /// Fully resolved config in key-value form.
    pub config: String,
    pub seeds: Vec<u64>,
    pub outputs: Vec<PathBuf>,
    pub started_at: String,
    pub finished_at: Option<String>,
    /// `running`, `complete` or `failed`.
    pub status: String,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(
        command: &[String],
        config_path: &Path,
        config: String,
        seeds: Vec<u64>,
        outputs: Vec<PathBuf>,
    ) -> Self {
        Self {
            command: command.to_vec(),
            code_version: env!("CARGO_PKG_VERSION"),
            config_path: config_path.to_path_buf(),
            config,
            seeds,
            outputs,
            started_at: now(),
            finished_at: None,
            status: "running".into(),
        }
    }

    pub fn finish(&mut self, ok: bool) {
        self.finished_at = Some(now());
        self.status = if ok { "complete" } else { "failed" }.into();
    }

    /// Writes `manifest.json` in `dir` via a temporary file and rename.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let tmp = dir.join(".manifest.json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        fs::rename(tmp, dir.join("manifest.json"))
    }
}
