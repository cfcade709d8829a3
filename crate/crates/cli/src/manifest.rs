use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use daseg::rng::hex_digest;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

/// Record of one command invocation, written next to its outputs.
///
/// Contains no timestamps, so equal inputs give byte-identical manifests.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// Canonical path of the dataset directory, when one was read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    /// Input file name → SHA-256 prefix.
    pub inputs: BTreeMap<String, String>,
    /// Output files, relative to the output directory.
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_image_reads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_label_reads: Option<usize>,
    /// Notable actions taken (e.g. stripping a decoder).
    pub log: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            ..Default::default()
        }
    }

    pub fn add_input(&mut self, label: &str, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(|e| runtime_io(path, e))?;
        self.inputs.insert(label.to_string(), hex_digest(&bytes));
        Ok(())
    }

    pub fn add_output(&mut self, out_dir: &Path, path: &Path) {
        let rel = path.strip_prefix(out_dir).unwrap_or(path);
        let rel = rel.to_string_lossy().into_owned();
        if !self.outputs.contains(&rel) {
            self.outputs.push(rel);
        }
    }

    pub fn write(&self, out_dir: &Path) -> CliResult<()> {
        let path = out_dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| runtime_io(&path, e))
    }

    /// The manifest stored next to `file`, if any.
    pub fn beside(file: &Path) -> CliResult<Option<RunManifest>> {
        let path = file.parent().unwrap_or(Path::new(".")).join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| runtime_io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}

pub fn runtime_io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}
