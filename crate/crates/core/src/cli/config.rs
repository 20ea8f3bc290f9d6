use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::Cli;
use crate::data::{PipelineConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::TieRule;
use crate::models::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: Option<f64>,
    pub tie_rule: Option<TieRule>,
}

/// Contents of a `--config` TOML file. Sections are partial and overlay the
/// built-in defaults key by key.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub precision: Option<Precision>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub synth: Option<toml::Table>,
    pub pipeline: Option<toml::Table>,
    pub model: Option<toml::Table>,
    pub train: Option<toml::Table>,
    pub eval: EvalSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// Deserialize `base` with the keys of `table` replacing its own. Unknown
/// keys are rejected by the target type.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, table: Option<&toml::Table>) -> Result<T> {
    let Some(table) = table else {
        return Ok(serde_json::from_value(serde_json::to_value(base).expect("serializable"))
            .expect("round trip of a serialized value"));
    };
    let mut value = serde_json::to_value(base).expect("serializable");
    let patch = serde_json::to_value(table).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    if let (Some(obj), Some(patch)) = (value.as_object_mut(), patch.as_object()) {
        for (k, v) in patch {
            obj.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// Fully resolved settings of one invocation, written as `run_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    #[serde(skip)]
    pub seed_given: bool,
    pub out: PathBuf,
    pub jobs: usize,
    pub precision: Precision,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tie_rule: Option<TieRule>,
}

impl RunConfig {
    pub(super) fn base(cli: &Cli, file: &FileConfig) -> Self {
        let command = match &cli.command {
            super::Command::Synth(_) => "synth",
            super::Command::Ingest(_) => "ingest",
            super::Command::Train(_) => "train",
            super::Command::Evaluate(_) => "evaluate",
            super::Command::Predict(_) => "predict",
            super::Command::Gradcheck(_) => "gradcheck",
        };
        let seed = cli.seed.or(file.seed);
        RunConfig {
            command: command.into(),
            seed: seed.unwrap_or(0),
            seed_given: seed.is_some(),
            out: cli.out.clone().or(file.out.clone()).unwrap_or_else(|| PathBuf::from("stvc-out")),
            jobs: cli.jobs.or(file.jobs).unwrap_or(1).max(1),
            precision: cli.precision.or(file.precision).unwrap_or_default(),
            manifest: None,
            checkpoint: None,
            resume: None,
            synth: None,
            pipeline: None,
            model: None,
            train: None,
            threshold: None,
            tie_rule: None,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        super::write_json(&dir.join("run_config.json"), self)
    }
}
