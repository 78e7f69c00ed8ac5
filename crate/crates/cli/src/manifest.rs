use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::exit::{Classify, CliError};

/// Record of one command run, written to `manifest.json` before the work
/// starts and rewritten with the finish time once every output exists.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub git_describe: String,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub outputs: Vec<String>,
    #[serde(skip)]
    path: PathBuf,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

impl RunManifest {
    /// Creates `out_dir` and writes the manifest with the planned outputs.
    pub fn begin(out_dir: &Path, command: &str, config: serde_json::Value, seed: u64, outputs: &[PathBuf]) -> Result<Self, CliError> {
        std::fs::create_dir_all(out_dir).or_usage()?;
        let m = Self {
            command: command.into(),
            config,
            seed,
            git_describe: git_describe(),
            started_unix: now(),
            finished_unix: None,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            path: out_dir.join("manifest.json"),
        };
        m.write()?;
        Ok(m)
    }

    fn write(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&self.path, text + "\n").or_runtime()
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        if let Some(missing) = self.outputs.iter().find(|p| !Path::new(p).exists()) {
            return Err(CliError::runtime(anyhow::anyhow!("expected output {missing} was not written")));
        }
        self.finished_unix = Some(now());
        self.write()
    }
}
