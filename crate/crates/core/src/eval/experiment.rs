use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{confusion, intent_prf, slot_prf, EvalError, MetricTable, Prf, ReportRow, Result};
use crate::corpus::{holdout, kfold, load_corpus, split, Corpus};
use crate::embeddings::{EmbeddingStack, EmbeddingTable, TableDescriptor};
use crate::fusion::{load_feature_store, FeatureSchema, FeatureStore, FusionPolicy, Modality};
use crate::models::{train_pipeline, HJoint2Pipeline, NLUResult, TrainConfig};

/// How the corpus is partitioned for training and scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Protocol {
    /// Stratified train/dev/test split.
    Split {
        #[serde(default = "default_ratios")]
        ratios: (f64, f64, f64),
    },
    /// Stratified k-fold; `dev_fraction` of each training fold is held out
    /// for early stopping.
    Kfold {
        k: usize,
        #[serde(default = "default_dev_fraction")]
        dev_fraction: f64,
    },
}

fn default_ratios() -> (f64, f64, f64) {
    (0.8, 0.1, 0.1)
}

fn default_dev_fraction() -> f64 {
    0.1
}

fn yes() -> bool {
    true
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol::Split {
            ratios: default_ratios(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Corpus JSONL path; unused when data is supplied in memory.
    #[serde(default)]
    pub corpus: Option<String>,
    #[serde(default)]
    pub features: Option<String>,
    #[serde(default)]
    pub feature_schema: FeatureSchema,
    pub embeddings: Vec<TableDescriptor>,
    #[serde(default)]
    pub fusion: FusionPolicy,
    pub train: TrainConfig,
    #[serde(default)]
    pub protocol: Protocol,
    /// Count the `None` slot class in slot aggregates.
    #[serde(default = "yes")]
    pub include_none: bool,
    /// Partition seed; model initialisation uses `train.seed`.
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        match self.protocol {
            Protocol::Split { .. } => {}
            Protocol::Kfold { k, dev_fraction } => {
                if k < 2 {
                    return Err(EvalError::InvalidConfig(format!("k must be at least 2, got {k}")));
                }
                if !(0.0..1.0).contains(&dev_fraction) {
                    return Err(EvalError::InvalidConfig(format!(
                        "dev_fraction {dev_fraction} is outside [0, 1)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Everything an experiment reads from disk.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub corpus: Corpus,
    pub stack: EmbeddingStack,
    pub store: Option<FeatureStore>,
}

impl ExperimentData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let path = cfg
            .corpus
            .as_ref()
            .ok_or_else(|| EvalError::InvalidConfig("no corpus path given".into()))?;
        if cfg.embeddings.is_empty() {
            return Err(EvalError::InvalidConfig(
                "at least one embedding table is required".into(),
            ));
        }
        let corpus = load_corpus(path)?;
        let stack = EmbeddingStack::load(&cfg.embeddings)?;
        let store = match &cfg.features {
            Some(p) => Some(load_feature_store(p, cfg.feature_schema)?),
            None => None,
        };
        Ok(Self { corpus, stack, store })
    }

    pub fn from_tables(corpus: Corpus, tables: Vec<EmbeddingTable>, store: Option<FeatureStore>) -> Result<Self> {
        let stack = EmbeddingStack::new(tables.into_iter().map(Arc::new).collect())?;
        Ok(Self { corpus, stack, store })
    }
}

/// Scores of one trained pipeline on one test set.
#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub intent: MetricTable,
    /// Merged slot output with and without the `None` class.
    pub slots_with_none: MetricTable,
    pub slots_without_none: MetricTable,
    /// Level-1 tags alone, `None` handled as requested.
    pub level1_slots: MetricTable,
    pub include_none: bool,
    /// Rows are gold intents, columns predictions, in inventory order.
    pub intent_confusion: Vec<Vec<usize>>,
    #[serde(skip)]
    pub predictions: Vec<NLUResult>,
}

impl Evaluation {
    pub fn slots(&self) -> &MetricTable {
        if self.include_none {
            &self.slots_with_none
        } else {
            &self.slots_without_none
        }
    }
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

/// Fails with `InventoryMismatch` when `test` uses labels the model lacks.
fn check_inventories(p: &HJoint2Pipeline, test: &Corpus) -> Result<()> {
    let mut unseen_intents = BTreeSet::new();
    let mut unseen_slots = BTreeSet::new();
    for u in &test.utterances {
        if !p.intent_inventory.labels().contains(&u.intent) {
            unseen_intents.insert(u.intent.as_str());
        }
        for l in &u.slot_labels {
            if !p.slot_inventory.labels().contains(l) {
                unseen_slots.insert(l.as_str());
            }
        }
    }
    if unseen_intents.is_empty() && unseen_slots.is_empty() {
        return Ok(());
    }
    let mut parts = Vec::new();
    if !unseen_intents.is_empty() {
        parts.push(format!("unknown intents {unseen_intents:?}"));
    }
    if !unseen_slots.is_empty() {
        parts.push(format!("unknown slot labels {unseen_slots:?}"));
    }
    Err(EvalError::InventoryMismatch(parts.join("; ")))
}

pub fn evaluate(
    p: &HJoint2Pipeline,
    test: &Corpus,
    store: Option<&FeatureStore>,
    include_none: bool,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    check_inventories(p, test)?;
    let predictions: Vec<NLUResult> = test
        .utterances
        .par_iter()
        .map(|u| p.predict(u, store))
        .collect::<std::result::Result<_, _>>()?;
    let pred_intents: Vec<&str> = predictions.iter().map(|r| r.intent.as_str()).collect();
    let gold_intents: Vec<&str> = test.utterances.iter().map(|u| u.intent.as_str()).collect();
    let merged: Vec<Vec<&str>> = predictions.iter().map(|r| strs(&r.slots)).collect();
    let level1: Vec<Vec<&str>> = predictions.iter().map(|r| strs(&r.level1_slots)).collect();
    let golds: Vec<Vec<&str>> = test.utterances.iter().map(|u| strs(&u.slot_labels)).collect();
    Ok(Evaluation {
        intent: intent_prf(&pred_intents, &gold_intents)?,
        slots_with_none: slot_prf(&merged, &golds, true)?,
        slots_without_none: slot_prf(&merged, &golds, false)?,
        level1_slots: slot_prf(&level1, &golds, include_none)?,
        include_none,
        intent_confusion: confusion(&pred_intents, &gold_intents, p.intent_inventory.labels())?,
        predictions,
    })
}

/// Modality column of a report row.
pub fn modality_tags(tables: &[TableDescriptor], fusion: &FusionPolicy) -> Vec<String> {
    let mods = fusion.modalities();
    let mut tags = vec!["Text".to_string()];
    let speech = tables.iter().any(|t| t.name.to_ascii_lowercase().contains("speech"));
    if speech || mods.contains(&Modality::Audio) {
        tags.push("Audio".into());
    }
    if mods.contains(&Modality::VideoCabin) || mods.contains(&Modality::VideoRoad) {
        tags.push("Video".into());
    }
    tags
}

fn feature_label(tables: &[TableDescriptor], fusion: &FusionPolicy) -> String {
    let names: Vec<&str> = tables.iter().map(|t| t.name.as_str()).collect();
    let mut s = format!("Embeddings ({})", names.join("+"));
    let mods = fusion.modalities();
    if mods.contains(&Modality::Audio) {
        s.push_str(" + Audio");
    }
    let video: Vec<&str> = [(Modality::VideoCabin, "cabin"), (Modality::VideoRoad, "road")]
        .into_iter()
        .filter(|(m, _)| mods.contains(m))
        .map(|(_, n)| n)
        .collect();
    if !video.is_empty() {
        s.push_str(&format!(" + Video ({})", video.join("+")));
    }
    s
}

#[derive(Clone, Debug, Serialize)]
pub struct FoldResult {
    pub fold: Option<usize>,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub level1_epochs: usize,
    pub level2_epochs: usize,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub seed: u64,
    pub protocol: Protocol,
    pub rows: Vec<ReportRow>,
    pub folds: Vec<FoldResult>,
}

fn row(modalities: &[String], features: String, e: &Evaluation) -> ReportRow {
    ReportRow {
        modalities: modalities.to_vec(),
        features,
        intent: e.intent.weighted.into(),
        slot: Some(e.slots().weighted.into()),
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summary_rows(modalities: &[String], features: &str, rows: &[ReportRow]) -> [ReportRow; 2] {
    let pick = |f: &dyn Fn(&ReportRow) -> f64| mean_std(&rows.iter().map(f).collect::<Vec<_>>());
    let stats = [
        pick(&|r| r.intent.p),
        pick(&|r| r.intent.r),
        pick(&|r| r.intent.f1),
        pick(&|r| r.slot.map_or(0.0, |s| s.p)),
        pick(&|r| r.slot.map_or(0.0, |s| s.r)),
        pick(&|r| r.slot.map_or(0.0, |s| s.f1)),
    ];
    let make = |tag: &str, sel: fn((f64, f64)) -> f64| ReportRow {
        modalities: modalities.to_vec(),
        features: format!("{features} [{tag}]"),
        intent: Prf {
            p: sel(stats[0]),
            r: sel(stats[1]),
            f1: sel(stats[2]),
        },
        slot: Some(Prf {
            p: sel(stats[3]),
            r: sel(stats[4]),
            f1: sel(stats[5]),
        }),
    };
    [make("mean", |s| s.0), make("std", |s| s.1)]
}

fn run_fold(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    fold: Option<usize>,
    train: &Corpus,
    dev: Option<&Corpus>,
    test: &Corpus,
) -> Result<FoldResult> {
    let store = data.store.as_ref();
    let (p, report) = train_pipeline(
        train,
        dev,
        data.stack.clone(),
        store,
        cfg.fusion.clone(),
        cfg.feature_schema,
        &cfg.train,
    )?;
    let evaluation = evaluate(&p, test, store, cfg.include_none)?;
    log::info!(
        "{}: intent wF1 {:.4}, slot wF1 {:.4}",
        fold.map_or("split".to_string(), |f| format!("fold {}", f + 1)),
        evaluation.intent.weighted.f1,
        evaluation.slots().weighted.f1
    );
    Ok(FoldResult {
        fold,
        train_size: train.len(),
        dev_size: dev.map_or(0, |d| d.len()),
        test_size: test.len(),
        level1_epochs: report.level1.len(),
        level2_epochs: report.level2.len(),
        evaluation,
    })
}

/// Loads the configured files and runs the experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let data = ExperimentData::load(cfg)?;
    run_experiment_with(cfg, &data)
}

/// Runs the experiment on data already in memory. Embedding descriptors in
/// `cfg` are replaced by those of `data.stack` for labelling.
pub fn run_experiment_with(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.fusion.is_enabled() && data.store.is_none() {
        return Err(EvalError::InvalidConfig(
            "fusion is enabled but no feature store was given".into(),
        ));
    }
    let tables = data.stack.describe();
    let modalities = modality_tags(&tables, &cfg.fusion);
    let features = feature_label(&tables, &cfg.fusion);
    let mut rows = Vec::new();
    let mut folds = Vec::new();
    match cfg.protocol {
        Protocol::Split { ratios } => {
            let (train, dev, test) = split(&data.corpus, ratios, cfg.seed)?;
            let r = run_fold(cfg, data, None, &train, Some(&dev), &test)?;
            rows.push(row(&modalities, features, &r.evaluation));
            folds.push(r);
        }
        Protocol::Kfold { k, dev_fraction } => {
            for (i, f) in kfold(&data.corpus, k, cfg.seed)?.into_iter().enumerate() {
                let (train, dev) = if dev_fraction > 0.0 {
                    let (t, d) = holdout(&f.train, dev_fraction, cfg.seed.wrapping_add(i as u64))?;
                    (t, Some(d))
                } else {
                    (f.train, None)
                };
                let r = run_fold(cfg, data, Some(i), &train, dev.as_ref(), &f.test)?;
                rows.push(row(&modalities, format!("{features} [fold {}]", i + 1), &r.evaluation));
                folds.push(r);
            }
            let summary = summary_rows(&modalities, &features, &rows);
            rows.extend(summary);
        }
    }
    Ok(ExperimentReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        protocol: cfg.protocol.clone(),
        rows,
        folds,
    })
}
