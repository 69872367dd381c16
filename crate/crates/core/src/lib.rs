//! Hierarchical joint intent detection and slot filling (H-Joint-2) with
//! stacked word/speech embeddings and utterance-level audio/video fusion.

pub mod corpus;
pub mod embeddings;
pub mod eval;
pub mod fusion;
pub mod models;
pub mod neural;
