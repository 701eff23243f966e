use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const TOOL: &str = "ddfilt";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything needed to re-run a command. Contains no timestamps or host
/// details so that re-runs reproduce it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Resolved arguments, defaults included.
    pub parameters: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
}

impl RunManifest {
    pub fn new<A: Serialize>(subcommand: &str, args: &A, seed: Option<u64>) -> Result<Self> {
        Ok(Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            subcommand: subcommand.into(),
            parameters: serde_json::to_value(args)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
        })
    }

    pub fn input(mut self, p: impl Into<PathBuf>) -> Self {
        self.inputs.push(p.into());
        self
    }

    pub fn output(mut self, p: impl Into<PathBuf>) -> Self {
        self.outputs.push(p.into());
        self
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_file(path, &text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn check_version(&self) -> Result<()> {
        if self.tool != TOOL {
            return Err(crate::usage(format!("manifest was written by '{}', not {TOOL}", self.tool)));
        }
        if self.version != VERSION {
            log::warn!("manifest from version {} replayed with {VERSION}; outputs may differ", self.version);
        }
        Ok(())
    }
}

/// `dir/file` or, for a file-like output path, a sibling named from its stem.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
