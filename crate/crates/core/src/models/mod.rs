//! H-Joint-2: a Level-1 keyword/slot tagger whose non-`None` predictions gate
//! the tokens fed to a Level-2 joint slot/intent model.

mod check;
mod level1;
mod level2;
mod pipeline;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::NONE_LABEL;
use crate::embeddings::EmbeddingError;
use crate::fusion::FusionError;
use crate::neural::NeuralError;

pub use check::{check_level1, check_level2, GradCheckCase};
pub use level1::{Level1Tagger, Tagging};
pub use level2::{Level2Forward, Level2Joint, Level2Output};
pub use pipeline::{
    load_pipeline, load_pipeline_with_stack, save_pipeline, HJoint2Pipeline, Prediction, FALLBACK_POLICY, GATING_POLICY,
};
pub use train::{
    init_pipeline, train_level1, train_level2, train_pipeline, EpochRecord, Level, Level1Example, Level2Example,
    TrainConfig, TrainReport,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupted model file: {0}")]
    Corrupted(String),
    #[error("inventory mismatch: {0}")]
    InventoryMismatch(String),
    #[error("embedding stack is {got} wide but the model expects {expected}")]
    StackMismatch { expected: usize, got: usize },
    #[error("utterance {0:?} has no tokens")]
    EmptyUtterance(String),
    #[error("{tokens} tokens but {labels} labels")]
    LengthMismatch { tokens: usize, labels: usize },
    #[error("unknown {kind} label {label:?}")]
    UnknownLabel { kind: &'static str, label: String },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("{level} training diverged in epoch {epoch}: {detail}")]
    Diverged { level: Level, epoch: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Token positions passed from Level-1 to Level-2.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    pub indices: Vec<usize>,
    /// Set when every Level-1 label was `None` and the full sequence is used.
    pub fallback: bool,
}

pub fn gate_indices(labels: &[usize], none: usize) -> Gate {
    let indices: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != none).collect();
    if indices.is_empty() {
        Gate {
            indices: (0..labels.len()).collect(),
            fallback: true,
        }
    } else {
        Gate {
            indices,
            fallback: false,
        }
    }
}

/// Keeps tokens whose label is not `None`; all tokens with `fallback` set
/// when every label is `None`.
pub fn gate_tokens<S: AsRef<str>, L: AsRef<str>>(tokens: &[S], labels: &[L]) -> Result<Gate> {
    if tokens.len() != labels.len() {
        return Err(ModelError::LengthMismatch {
            tokens: tokens.len(),
            labels: labels.len(),
        });
    }
    let ids: Vec<usize> = labels.iter().map(|l| usize::from(l.as_ref() != NONE_LABEL)).collect();
    Ok(gate_indices(&ids, 0))
}

/// Prediction for one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NLUResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub tokens: Vec<String>,
    pub intent: String,
    pub confidence: f32,
    pub intent_probs: Vec<f32>,
    /// Level-2 labels at gated positions, `None` elsewhere.
    pub slots: Vec<String>,
    pub slot_confidences: Vec<f32>,
    pub level1_slots: Vec<String>,
    pub gate_mask: Vec<bool>,
    pub fallback: bool,
}
