//! TOML run configuration.
//!
//! Every field is optional; command-line flags override file values, which
//! override built-in defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use morphsim_core::character::DesignBox;
use morphsim_core::design_opt::{DesignOptConfig, DesignSubspace};
use morphsim_core::motion::{ClipKind, ClipParams};
use morphsim_core::CharacterModel;

use crate::train::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("unknown subspace {0:?} (expected \"leg-lengths\" or \"legs-and-gears\")")]
    Subspace(String),
}

/// One generated corpus clip.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorpusEntry {
    pub kind: ClipKind,
    #[serde(default)]
    pub params: ClipParams,
    #[serde(default = "default_duration")]
    pub duration: f64,
}

fn default_duration() -> f64 {
    4.0
}

/// All clip kinds with default parameters.
pub fn default_corpus() -> Vec<CorpusEntry> {
    [
        ClipKind::Walk,
        ClipKind::Hop,
        ClipKind::Crawl,
        ClipKind::Kick,
        ClipKind::CartwheelProxy,
    ]
    .into_iter()
    .map(|kind| CorpusEntry {
        kind,
        params: ClipParams::default(),
        duration: default_duration(),
    })
    .collect()
}

/// Which slice of the design space the optimizer searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubspaceKind {
    /// One scalar tying both legs' thigh and shin length scales.
    LegLengths,
    /// Leg lengths plus per-leg-joint motor gears.
    LegsAndGears,
}

impl SubspaceKind {
    pub fn build(self, model: &CharacterModel, bx: &DesignBox) -> DesignSubspace {
        match self {
            SubspaceKind::LegLengths => DesignSubspace::leg_lengths(model, bx.scale.0, bx.scale.1),
            SubspaceKind::LegsAndGears => DesignSubspace::legs_and_gears(model, bx),
        }
    }
}

impl FromStr for SubspaceKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "leg-lengths" => Ok(SubspaceKind::LegLengths),
            "legs-and-gears" => Ok(SubspaceKind::LegsAndGears),
            other => Err(ConfigError::Subspace(other.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Clips written by `gen-corpus`; defaults to one of each kind.
    pub corpus: Option<Vec<CorpusEntry>>,
    pub train: Option<TrainConfig>,
    pub design_opt: Option<DesignOptConfig>,
    pub subspace: Option<SubspaceKind>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }
}
