//! The JSON run configuration shared by `train` and `eval`.

use std::path::{Path, PathBuf};

use hjnt_core::embeddings::TableDescriptor;
use hjnt_core::eval::{ExperimentConfig, Protocol};
use hjnt_core::fusion::{FeatureSchema, FusionPolicy};
use hjnt_core::models::TrainConfig;
use hjnt_core::neural::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Relative paths are resolved against the directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub corpus: CorpusSection,
    pub embeddings: EmbeddingsSection,
    #[serde(default)]
    pub fusion: FusionPolicy,
    #[serde(default)]
    pub model: ModelSection,
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// Training corpus, split into train/dev/test unless `dev` is given.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    /// Feature schema JSON; the IS10/VGG dimensions when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingsSection {
    /// Stack order is list order.
    pub tables: Vec<TableDescriptor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub lambda: f64,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            hidden: t.hidden,
            lambda: t.lambda,
            dropout: t.dropout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub seed: u64,
}

fn default_lr() -> f64 {
    AdamConfig::default().lr
}
fn default_epochs() -> usize {
    TrainConfig::default().epochs
}
fn default_patience() -> usize {
    TrainConfig::default().patience
}
fn default_batch() -> usize {
    TrainConfig::default().batch_size
}

impl TrainSection {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            lr: default_lr(),
            epochs: default_epochs(),
            patience: default_patience(),
            batch_size: default_batch(),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub protocol: Protocol,
    pub include_none: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            protocol: Protocol::default(),
            include_none: true,
        }
    }
}

/// A parsed config plus the directory its relative paths refer to.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub cfg: CliConfig,
    pub base: PathBuf,
}

impl LoadedConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: CliConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { cfg, base })
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn tables(&self) -> Vec<TableDescriptor> {
        self.cfg
            .embeddings
            .tables
            .iter()
            .cloned()
            .map(|mut t| {
                t.path = t.path.map(|p| self.resolve(&p).display().to_string());
                t
            })
            .collect()
    }

    pub fn schema(&self) -> Result<FeatureSchema, CliError> {
        match &self.cfg.corpus.schema {
            Some(p) => Ok(FeatureSchema::load(self.resolve(p))?),
            None => Ok(FeatureSchema::default()),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let (m, t) = (&self.cfg.model, &self.cfg.train);
        TrainConfig {
            hidden: m.hidden,
            dropout: m.dropout,
            batch_size: t.batch_size,
            epochs: t.epochs,
            patience: t.patience,
            lambda: m.lambda,
            adam: AdamConfig {
                lr: t.lr,
                ..AdamConfig::default()
            },
            seed: t.seed,
        }
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let c = &self.cfg;
        Ok(ExperimentConfig {
            corpus: Some(self.resolve(&c.corpus.path).display().to_string()),
            features: c
                .corpus
                .features
                .as_ref()
                .map(|p| self.resolve(p).display().to_string()),
            feature_schema: self.schema()?,
            embeddings: self.tables(),
            fusion: c.fusion.clone(),
            train: self.train_config(),
            protocol: c.eval.protocol.clone(),
            include_none: c.eval.include_none,
            seed: c.train.seed,
        })
    }
}
