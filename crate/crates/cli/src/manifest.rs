use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: ExperimentConfig,
    /// Artifacts, relative to the output directory.
    pub files: Vec<String>,
    pub version: String,
    pub wall_clock_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    pub summary: serde_json::Value,
    pub notes: Vec<String>,
}

/// Collects artifacts for one run and writes them plus `manifest.json`.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("reports serialize");
        bytes.push(b'\n');
        self.add(name, bytes);
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    #[allow(clippy::too_many_arguments)]
    pub fn finish(
        self,
        command: &str,
        config: &ExperimentConfig,
        elapsed: Duration,
        converged: Option<bool>,
        summary: serde_json::Value,
        notes: Vec<String>,
    ) -> Result<RunManifest, CliError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| CliError::Io(format!("{}: {e}", self.dir.display())))?;
        let mut names = Vec::with_capacity(self.files.len() + 1);
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            names.push(name.clone());
        }
        names.push("manifest.json".into());
        let manifest = RunManifest {
            command: command.into(),
            config: config.clone(),
            files: names,
            version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_seconds: elapsed.as_secs_f64(),
            converged,
            summary,
            notes,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}
