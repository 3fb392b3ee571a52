//! Experiment configuration files and bundled presets.
//!
//! A configuration is a TOML document:
//!
//! ```toml
//! horizon = 1000
//! seeds = { base = 0, count = 4 }   # or an explicit list: seeds = [1, 2, 3]
//! output = "results/mab"
//!
//! [env]
//! kind = "mab"
//! arm_count = 2
//! context_dim = 1
//! noise_std = 0.1
//! means = [0.2, 0.5]
//!
//! [[agents]]
//! name = "ucb1"
//! kind = "rofu_ucb1"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{EnvKind, EnvSpec};
use crate::harness::AgentSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown preset {name:?}; available: {}", PRESET_NAMES.join(", "))]
    UnknownPreset { name: String },
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

/// Seeds as an explicit list or `count` consecutive values from `base`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    Range { base: u64, count: u64 },
}

impl Seeds {
    pub fn expand(&self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v.clone(),
            Seeds::Range { base, count } => (0..*count).map(|i| base + i).collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Seeds::List(v) => v.len(),
            Seeds::Range { count, .. } => *count as usize,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedAgent {
    pub name: String,
    #[serde(flatten)]
    pub spec: AgentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub horizon: usize,
    pub seeds: Seeds,
    pub output: PathBuf,
    pub env: EnvSpec,
    pub agents: Vec<NamedAgent>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.horizon == 0 {
            return invalid("`horizon` must be at least 1".into());
        }
        if self.seeds.len() < 2 {
            return invalid(format!("`seeds` must name at least 2 seeds, got {}", self.seeds.len()));
        }
        let mut seen = self.seeds.expand();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return invalid("`seeds` contains duplicates".into());
        }
        if self.agents.is_empty() {
            return invalid("`agents` must list at least one agent".into());
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.name.is_empty() || a.name.contains(['/', '\\']) || a.name.starts_with('.') {
                return invalid(format!("agents[{i}].name {:?} is not a plain directory name", a.name));
            }
            if self.agents[..i].iter().any(|b| b.name == a.name) {
                return invalid(format!("agent name {:?} is used twice", a.name));
            }
        }
        self.env.validate().map_err(|e| ConfigError::Invalid(format!("env: {e}")))?;
        Ok(())
    }

    /// Reads a config file; a relative dataset path is taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.env.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Loads `arg` as a bundled preset name, or else as a file path.
    pub fn load_preset_or_file(arg: &str) -> Result<Self> {
        if PRESET_NAMES.contains(&arg) {
            preset(arg)
        } else if Path::new(arg).exists() {
            Self::load(Path::new(arg))
        } else {
            Err(ConfigError::Io {
                path: arg.into(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or preset"),
            })
        }
    }

    pub fn is_dataset(&self) -> bool {
        matches!(self.env.kind, EnvKind::Dataset { .. })
    }
}

pub const PRESET_NAMES: [&str; 6] = ["mab10", "linear_d6", "kernel_rbf", "mlp_table2", "mlp_sim_deep", "dataset_csv"];

fn preset_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "mab10" => include_str!("../presets/mab10.toml"),
        "linear_d6" => include_str!("../presets/linear_d6.toml"),
        "kernel_rbf" => include_str!("../presets/kernel_rbf.toml"),
        "mlp_table2" => include_str!("../presets/mlp_table2.toml"),
        "mlp_sim_deep" => include_str!("../presets/mlp_sim_deep.toml"),
        "dataset_csv" => include_str!("../presets/dataset_csv.toml"),
        _ => return None,
    })
}

/// Directory holding the preset files and their data.
pub fn presets_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets")
}

/// Parses a bundled preset.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = preset_text(name).ok_or_else(|| ConfigError::UnknownPreset { name: name.into() })?;
    let mut cfg = ExperimentConfig::from_toml(text)?;
    cfg.env.resolve_paths(&presets_dir());
    Ok(cfg)
}
