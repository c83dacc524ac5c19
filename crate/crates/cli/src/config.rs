//! Optional TOML config file. Every key mirrors a command-line flag; a flag
//! given on the command line wins over the file, and the file wins over the
//! built-in default.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,

    pub alpha: Option<f64>,
    pub norm_mode: Option<String>,
    pub max_tokens: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,

    pub source: Option<String>,
    pub smoothing: Option<f64>,
    pub raw_floor: Option<f64>,
    pub replay: Option<PathBuf>,
    pub bridge_cmd: Option<String>,
    pub bridge_timeout_secs: Option<f64>,
    pub skip_boundaries: Option<bool>,

    pub num_facts: Option<usize>,
    pub p: Option<f64>,
    pub graph_size: Option<usize>,
    pub alphas: Option<Vec<f64>>,
    pub sizes: Option<Vec<usize>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }
}

/// First of `flag`, `file`, in that order.
pub fn pick<T: Clone>(flag: Option<T>, file: &Option<T>) -> Option<T> {
    flag.or_else(|| file.clone())
}
