//! Precision/recall/F1 for intents and slots, confusion matrices, and the
//! experiment runner producing modality/feature ablation rows.

mod experiment;
mod metrics;
mod report;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::embeddings::EmbeddingError;
use crate::fusion::FusionError;
use crate::models::ModelError;

pub use experiment::{
    evaluate, modality_tags, run_experiment, run_experiment_with, Evaluation, ExperimentConfig, ExperimentData,
    ExperimentReport, FoldResult, Protocol,
};
pub use metrics::{confusion, intent_prf, slot_prf, Aggregate, ClassMetrics, MetricTable};
pub use report::{report_csv, report_text, Prf, ReportRow, CSV_HEADER};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions but {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("utterance {index}: {preds} predicted tags but {golds} gold tags")]
    Misaligned { index: usize, preds: usize, golds: usize },
    #[error("nothing to score")]
    Empty,
    #[error("label {0:?} is not in the inventory")]
    UnknownLabel(String),
    #[error("inventory mismatch: {0}")]
    InventoryMismatch(String),
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

pub type Result<T> = std::result::Result<T, EvalError>;
