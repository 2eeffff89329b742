use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Full double precision: 17 significant digits.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Collects the files a command writes and records them in the manifest.
pub struct OutDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<OutDir> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(OutDir { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn text(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn record(&mut self, path: PathBuf) {
        self.written.push(path);
    }

    pub fn finish(self, input: &Path, command: &str, config: serde_json::Value) -> Result<()> {
        let manifest_path = self.path("manifest.json");
        let mut outputs: Vec<String> = self.written.iter().map(|p| p.display().to_string()).collect();
        outputs.push(manifest_path.display().to_string());
        let manifest = RunManifest {
            input: input.display().to_string(),
            command: command.to_string(),
            config,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            outputs,
        };
        std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

#[derive(Serialize)]
struct RunManifest {
    input: String,
    command: String,
    config: serde_json::Value,
    tool_version: String,
    timestamp: String,
    outputs: Vec<String>,
}
