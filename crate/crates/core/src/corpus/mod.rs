//! Annotated utterances, label inventories, the line-delimited corpus format,
//! validation, splitting, statistics and synthetic corpus generation.

mod format;
mod split;
mod stats;
pub mod synth;
pub mod templates;
mod validate;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{load_corpus, parse_corpus, save_corpus, write_corpus};
pub use split::{holdout, kfold, split, Fold};
pub use stats::{corpus_stats, StatsTable};
pub use synth::{generate_synthetic, SynthSpec, SyntheticData};
pub use validate::{validate_corpus, ValidationReport, Violation};

pub const NONE_LABEL: &str = "None";
pub const KEYWORD_LABEL: &str = "IntentKeyword";
pub const FALLBACK_INTENT: &str = "Other";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("length mismatch at line {line}: utterance {id} has {tokens} tokens and {slots} slot labels")]
    LengthMismatch {
        line: usize,
        id: String,
        tokens: usize,
        slots: usize,
    },
    #[error("empty token list at line {line} (utterance {id})")]
    EmptyUtterance { line: usize, id: String },
    #[error("unknown {kind} label {label:?} at line {line}")]
    UnknownLabel {
        line: usize,
        kind: &'static str,
        label: String,
    },
    #[error("duplicate id {id:?} at line {line}")]
    DuplicateId { line: usize, id: String },
    #[error("corpus {0} contains no utterances")]
    Empty(String),
    #[error("invalid inventory: {0}")]
    InvalidInventory(String),
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    InvalidRatios(Vec<f64>),
    #[error("corpus of {0} utterances is too small to split (need at least 3)")]
    TooSmall(usize),
    #[error("k = {k} is out of range for a corpus of {n} utterances")]
    KOutOfRange { k: usize, n: usize },
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("template set has no templates for intent {0}")]
    MissingTemplates(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// The default slot/keyword label inventory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SlotLabel {
    IntentKeyword,
    Location,
    PositionDirection,
    Person,
    TimeGuidance,
    GestureGaze,
    Object,
    NoneLabel,
}

impl SlotLabel {
    pub const ALL: [SlotLabel; 8] = [
        SlotLabel::IntentKeyword,
        SlotLabel::Location,
        SlotLabel::PositionDirection,
        SlotLabel::Person,
        SlotLabel::TimeGuidance,
        SlotLabel::GestureGaze,
        SlotLabel::Object,
        SlotLabel::NoneLabel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SlotLabel::IntentKeyword => KEYWORD_LABEL,
            SlotLabel::Location => "Location",
            SlotLabel::PositionDirection => "PositionDirection",
            SlotLabel::Person => "Person",
            SlotLabel::TimeGuidance => "TimeGuidance",
            SlotLabel::GestureGaze => "GestureGaze",
            SlotLabel::Object => "Object",
            SlotLabel::NoneLabel => NONE_LABEL,
        }
    }
}

/// The default utterance-level intent inventory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IntentLabel {
    SetDestination,
    SetRoute,
    Park,
    PullOver,
    Stop,
    GoFaster,
    GoSlower,
    OpenDoor,
    Other,
}

impl IntentLabel {
    pub const ALL: [IntentLabel; 9] = [
        IntentLabel::SetDestination,
        IntentLabel::SetRoute,
        IntentLabel::Park,
        IntentLabel::PullOver,
        IntentLabel::Stop,
        IntentLabel::GoFaster,
        IntentLabel::GoSlower,
        IntentLabel::OpenDoor,
        IntentLabel::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IntentLabel::SetDestination => "SetDestination",
            IntentLabel::SetRoute => "SetRoute",
            IntentLabel::Park => "Park",
            IntentLabel::PullOver => "PullOver",
            IntentLabel::Stop => "Stop",
            IntentLabel::GoFaster => "GoFaster",
            IntentLabel::GoSlower => "GoSlower",
            IntentLabel::OpenDoor => "OpenDoor",
            IntentLabel::Other => FALLBACK_INTENT,
        }
    }
}

/// Ordered label set with O(1) name lookup.
#[derive(Clone, Debug)]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for LabelSet {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels
    }
}

impl LabelSet {
    pub fn new(labels: Vec<String>) -> std::result::Result<Self, String> {
        if labels.is_empty() {
            return Err("label list is empty".into());
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(format!("label {l:?} listed twice"));
            }
        }
        Ok(Self { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.labels[idx]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }
}

/// Slot labels with a designated none-label and keyword-label.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotInventory {
    set: LabelSet,
    none: usize,
    keyword: usize,
}

impl SlotInventory {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let set = LabelSet::new(labels).map_err(CorpusError::InvalidInventory)?;
        let none = set
            .index_of(NONE_LABEL)
            .ok_or_else(|| CorpusError::InvalidInventory(format!("slot inventory lacks {NONE_LABEL:?}")))?;
        let keyword = set
            .index_of(KEYWORD_LABEL)
            .ok_or_else(|| CorpusError::InvalidInventory(format!("slot inventory lacks {KEYWORD_LABEL:?}")))?;
        Ok(Self { set, none, keyword })
    }

    pub fn none_index(&self) -> usize {
        self.none
    }

    pub fn keyword_index(&self) -> usize {
        self.keyword
    }

    pub fn labels(&self) -> &LabelSet {
        &self.set
    }
}

impl Default for SlotInventory {
    fn default() -> Self {
        Self::new(SlotLabel::ALL.iter().map(|l| l.as_str().to_string()).collect()).expect("default slot inventory")
    }
}

impl std::ops::Deref for SlotInventory {
    type Target = LabelSet;
    fn deref(&self) -> &LabelSet {
        &self.set
    }
}

/// Intent labels with a designated fallback label.
#[derive(Clone, Debug, PartialEq)]
pub struct IntentInventory {
    set: LabelSet,
    fallback: usize,
}

impl IntentInventory {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let set = LabelSet::new(labels).map_err(CorpusError::InvalidInventory)?;
        let fallback = set
            .index_of(FALLBACK_INTENT)
            .ok_or_else(|| CorpusError::InvalidInventory(format!("intent inventory lacks {FALLBACK_INTENT:?}")))?;
        Ok(Self { set, fallback })
    }

    pub fn fallback_index(&self) -> usize {
        self.fallback
    }

    pub fn labels(&self) -> &LabelSet {
        &self.set
    }
}

impl Default for IntentInventory {
    fn default() -> Self {
        Self::new(IntentLabel::ALL.iter().map(|l| l.as_str().to_string()).collect()).expect("default intent inventory")
    }
}

impl std::ops::Deref for IntentInventory {
    type Target = LabelSet;
    fn deref(&self) -> &LabelSet {
        &self.set
    }
}

/// Optional per-modality keys into a feature store. When a modality has no
/// explicit reference the utterance id is used as the key.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRefs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_cabin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_road: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedUtterance {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(rename = "slots")]
    pub slot_labels: Vec<String>,
    pub intent: String,
    #[serde(default, rename = "features", skip_serializing_if = "Option::is_none")]
    pub feature_refs: Option<FeatureRefs>,
}

impl AnnotatedUtterance {
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        slot_labels: Vec<String>,
        intent: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            tokens,
            slot_labels,
            intent: intent.into(),
            feature_refs: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<AnnotatedUtterance>,
    pub slot_inventory: SlotInventory,
    pub intent_inventory: IntentInventory,
}

impl Corpus {
    /// Corpus over the default inventories.
    pub fn with_default_inventories(utterances: Vec<AnnotatedUtterance>) -> Self {
        Self {
            utterances,
            slot_inventory: SlotInventory::default(),
            intent_inventory: IntentInventory::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// A corpus with the same inventories holding `utterances`.
    pub fn subset(&self, utterances: Vec<AnnotatedUtterance>) -> Self {
        Self {
            utterances,
            slot_inventory: self.slot_inventory.clone(),
            intent_inventory: self.intent_inventory.clone(),
        }
    }

    pub fn token_count(&self) -> usize {
        self.utterances.iter().map(|u| u.tokens.len()).sum()
    }
}
