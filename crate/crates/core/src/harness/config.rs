//! Experiment configuration: TOML file, then `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::embedding::{Embedder, EmbedderKind};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, Thresholds};
use crate::harness::datasets::DatasetSpec;
use crate::neighborhoods::SelectionMethod;
use crate::training::TrainConfig;

/// Environment variable naming the directory relative output paths live in.
pub const OUTPUT_ROOT_ENV: &str = "ICGAN_OUTPUT_ROOT";

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::ring8(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    /// Defaults to the data dimension.
    pub output_dim: Option<usize>,
    pub seed: u64,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Identity,
            output_dim: None,
            seed: 0,
        }
    }
}

impl EmbedderSpec {
    pub fn fit(&self, data: &Tensor) -> Result<Embedder> {
        Embedder::fit(
            data,
            self.kind,
            self.output_dim.unwrap_or(data.cols()),
            self.seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    /// Stored conditioning instances; all training instances when absent.
    pub n_instances: Option<usize>,
    pub method: SelectionMethod,
    pub samples_per_instance: usize,
    pub k_pr: usize,
    pub seed: u64,
    pub thresholds: Thresholds,
    /// Interval FID during training; off when absent.
    pub eval_every: Option<usize>,
    pub log_every: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            n_instances: None,
            method: SelectionMethod::Clustered,
            samples_per_instance: 10,
            k_pr: 5,
            seed: 0,
            thresholds: Thresholds::default(),
            eval_every: None,
            log_every: 100,
        }
    }
}

impl EvalSpec {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            samples_per_instance: self.samples_per_instance,
            k_pr: self.k_pr,
            seed: self.seed,
            thresholds: self.thresholds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Held-out draw of `dataset` when absent.
    pub reference: Option<DatasetSpec>,
    pub embedder: EmbedderSpec,
    pub train: TrainConfig,
    pub eval: EvalSpec,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            reference: None,
            embedder: EmbedderSpec::default(),
            train: TrainConfig::default(),
            eval: EvalSpec::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            what: "experiment config",
            detail: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            what: "experiment config",
            detail: e.to_string(),
        })
    }

    pub fn reference_spec(&self) -> DatasetSpec {
        self.reference
            .clone()
            .unwrap_or_else(|| self.dataset.held_out())
    }

    /// Applies `section.field=value` overrides; see [`apply_overrides`].
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        apply_overrides(self, overrides)
    }
}

/// Re-reads `value` with `dotted.key=value` assignments applied. Values are
/// parsed as TOML literals, falling back to bare strings.
pub fn apply_overrides<T, S>(value: &T, overrides: &[S]) -> Result<T>
where
    T: Serialize + DeserializeOwned + Clone,
    S: AsRef<str>,
{
    if overrides.is_empty() {
        return Ok(value.clone());
    }
    let bad = |detail: String| Error::Config {
        what: "override",
        detail,
    };
    let mut root = toml::Table::try_from(value).map_err(|e| bad(e.to_string()))?;
    for o in overrides {
        let o = o.as_ref();
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got {o:?}")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        let (last, parents) = path.split_last().expect("split yields one item");
        let mut table = &mut root;
        for p in parents {
            let entry = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| bad(format!("{key}: {p} is not a section")))?;
        }
        table.insert(last.to_string(), parse_value(raw.trim()));
    }
    root.try_into()
        .map_err(|e: toml::de::Error| bad(e.to_string()))
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// `dir` itself when absolute, otherwise under the output root.
pub fn resolve_output(dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        return dir.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(dir),
        None => dir.to_path_buf(),
    }
}
