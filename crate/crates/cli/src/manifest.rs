//! The record every run leaves next to its outputs.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub seeds: Vec<(String, u64)>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: impl Serialize) -> Self {
        Self {
            subcommand: subcommand.into(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_s: None,
        }
    }

    pub fn seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.push((name.into(), seed));
        self
    }

    pub fn inputs<P: AsRef<Path>>(mut self, paths: impl IntoIterator<Item = P>) -> Self {
        self.inputs.extend(paths.into_iter().map(|p| p.as_ref().to_path_buf()));
        self
    }

    pub fn outputs<P: AsRef<Path>>(mut self, paths: impl IntoIterator<Item = P>) -> Self {
        self.outputs.extend(paths.into_iter().map(|p| p.as_ref().to_path_buf()));
        self
    }

    /// `<anchor>.manifest.json`; for a directory, `manifest.json` inside it.
    pub fn path_for(anchor: &Path) -> PathBuf {
        if anchor.is_dir() {
            return anchor.join("manifest.json");
        }
        let mut name = anchor.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        anchor.with_file_name(name)
    }

    pub fn write(&self, anchor: &Path) -> std::io::Result<PathBuf> {
        let path = Self::path_for(anchor);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}
