//! Command-line front end: strict run configs, file formats, the experiment
//! runner and table rendering. The `hierood` binary is a thin wrapper over
//! [`run`].

mod commands;
pub mod experiment;
pub mod io;
pub mod render;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detectors::{DetectorConfig, DetectorError};
use crate::hierarchy::{HierarchyError, Holdout, SplitError};
use crate::losses::LossError;
use crate::metrics::MetricError;
use crate::mixing::MixError;
use crate::trainer::{ModelError, SynthConfig, SynthError, TrainConfig, TrainError};

pub use commands::{run, Cli};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentOutcome, MethodSpec};
pub use io::{ingest_scores, ScoreLine, ScoresFile};
pub use render::{aggregate, render_table, AggregateRow, Table};

/// Current config and artifact format version.
pub const FORMAT_VERSION: u32 = 1;

/// Relative output paths are resolved under this directory when it is set.
pub const OUT_DIR_ENV: &str = "HIEROOD_OUT_DIR";

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}:{line}: {reason}")]
    Line { path: PathBuf, line: usize, reason: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    /// 1 io, 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Line { .. } => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Loss(LossError::Config(_)) => CliError::Config(e.to_string()),
            TrainError::NonFinite { .. } | TrainError::Metric(MetricError::NonFinite(_)) => {
                CliError::Numeric(e.to_string())
            }
            TrainError::Mix(MixError::BadAlpha(_) | MixError::NotAGrid | MixError::BadGrid { .. }) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DetectorError> for CliError {
    fn from(e: DetectorError) -> Self {
        match e {
            DetectorError::BadTemperature(_) => CliError::Config(e.to_string()),
            DetectorError::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<HierarchyError> for CliError {
    fn from(e: HierarchyError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SplitError> for CliError {
    fn from(e: SplitError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Stamp carried by every written artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunProvenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl RunProvenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        RunProvenance {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config_hash.into(),
            seed,
        }
    }
}

/// SHA-256 of the canonical (compact, field-ordered) JSON form of a value.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&canonical))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    /// Path to a hierarchy spec, or `bundled:fgvc-aircraft` / `bundled:ships-rs`.
    pub hierarchy: String,
    #[serde(default)]
    pub holdouts: Vec<Holdout>,
}

/// One config file for every subcommand. Each command reads its own section;
/// unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub split: Option<SplitSection>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub score: Option<DetectorConfig>,
    #[serde(default)]
    pub evaluate: Option<DetectorConfig>,
    #[serde(default)]
    pub report: Option<DetectorConfig>,
    #[serde(default)]
    pub experiment: Option<ExperimentConfig>,
}

impl RunConfig {
    pub fn new() -> Self {
        RunConfig {
            version: FORMAT_VERSION,
            seed: None,
            out_dir: None,
            split: None,
            synth: None,
            train: None,
            score: None,
            evaluate: None,
            report: None,
            experiment: None,
        }
    }

    /// Strict parse: unknown keys and a missing or unsupported version fail.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.version != FORMAT_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {} (this build reads {FORMAT_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::new()
    }
}
