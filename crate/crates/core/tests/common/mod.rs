#![allow(dead_code)]

use std::sync::Arc;

use hjnt_core::corpus::{generate_synthetic, SynthSpec, SyntheticData};
use hjnt_core::embeddings::EmbeddingStack;
use hjnt_core::fusion::{FeatureSchema, Modality};
use hjnt_core::models::TrainConfig;
use hjnt_core::neural::AdamConfig;

pub const SMALL_SCHEMA: FeatureSchema = FeatureSchema {
    audio: 40,
    video_cabin: 12,
    video_road: 12,
};

/// Synthetic corpus with 16-wide tables and small feature vectors.
pub fn small_data(n: usize, seed: u64) -> SyntheticData {
    let mut spec = SynthSpec {
        n_utterances: n,
        seed,
        ..SynthSpec::default()
    };
    spec.features.schema = SMALL_SCHEMA;
    spec.features.modalities = Modality::ALL.to_vec();
    spec.features.informative_fraction = 0.25;
    spec.embeddings.dim = 16;
    generate_synthetic(&spec).unwrap()
}

pub fn stack(d: &SyntheticData, tables: &[usize]) -> EmbeddingStack {
    EmbeddingStack::new(tables.iter().map(|&i| Arc::new(d.tables[i].clone())).collect()).unwrap()
}

pub fn quick_cfg(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        hidden: 16,
        dropout: 0.1,
        batch_size: 8,
        epochs,
        patience: 0,
        lambda: 1.0,
        adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        seed,
    }
}
