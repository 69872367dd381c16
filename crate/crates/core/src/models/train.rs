use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{HJoint2Pipeline, Level1Tagger, Level2Joint, ModelError, Result};
use crate::corpus::{AnnotatedUtterance, Corpus};
use crate::embeddings::EmbeddingStack;
use crate::eval::{intent_prf, slot_prf};
use crate::fusion::{gather_features, FeatureSchema, FeatureStore, FusionPolicy, NormStats};
use crate::neural::{adam_update, AdamConfig, AdamState, Matrix, NeuralError, Parameters};

fn default_hidden() -> usize {
    128
}
fn default_dropout() -> f64 {
    0.5
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    50
}
fn default_patience() -> usize {
    5
}
fn default_lambda() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Inverted dropout on embedded inputs, training only.
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Epochs without dev improvement before stopping; 0 disables.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            dropout: default_dropout(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            patience: default_patience(),
            lambda: default_lambda(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.hidden == 0 {
            return bad("hidden must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        let a = &self.adam;
        if !(a.lr >= 0.0 && a.lr.is_finite())
            || !(0.0..1.0).contains(&a.beta1)
            || !(0.0..1.0).contains(&a.beta2)
            || a.eps.is_nan()
            || a.eps <= 0.0
        {
            return bad("invalid Adam hyperparameters");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Level1,
    Level2,
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Level::Level1 => "level-1",
            Level::Level2 => "level-2",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub level: Level,
    pub epoch: usize,
    /// Mean training loss per utterance.
    pub loss: f64,
    pub dev_score: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub level1: Vec<EpochRecord>,
    pub level2: Vec<EpochRecord>,
}

const CHUNK: usize = 4;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_INIT: u64 = 100;
const STREAM_SHUFFLE: u64 = 200;

fn dropout(x: &Matrix<f32>, p: f64, seed: u64, level: Level, epoch: usize, idx: usize) -> Matrix<f32> {
    let mut out = x.clone();
    if p == 0.0 {
        return out;
    }
    let stream = (1u64 << 62) | ((level as u64) << 60) | ((epoch as u64) << 32) | idx as u64;
    let mut rng = stream_rng(seed, stream);
    let keep = (1.0 / (1.0 - p)) as f32;
    for v in out.as_mut_slice() {
        *v = if rng.random_bool(p) { 0.0 } else { *v * keep };
    }
    out
}

/// Minibatch Adam over `n` examples. `grad(model, idx, epoch, grads)` adds
/// one example's gradient and returns its loss; `dev` scores a model.
/// With a dev score the best-scoring parameters are kept.
fn fit<M, G, D>(
    model: &mut M,
    n: usize,
    cfg: &TrainConfig,
    level: Level,
    grad: G,
    mut dev: D,
) -> Result<Vec<EpochRecord>>
where
    M: Parameters<f32> + Clone + Send + Sync,
    G: Fn(&M, usize, usize, &mut M) -> std::result::Result<f32, NeuralError> + Sync,
    D: FnMut(&M) -> Result<Option<f64>>,
{
    if n == 0 {
        return Err(ModelError::EmptyCorpus);
    }
    let mut adam = AdamState::new(&*model, cfg.adam);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(cfg.seed, STREAM_SHUFFLE + level as u64);
    let mut history = Vec::new();
    let mut best: Option<(f64, M)> = None;
    let mut stale = 0;
    let diverged = |epoch, detail: String| ModelError::Diverged { level, epoch, detail };

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let current: &M = model;
            let parts: Vec<std::result::Result<(f64, M), NeuralError>> = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut g = current.zeroed();
                    let mut loss = 0.0f64;
                    for &i in chunk {
                        loss += grad(current, i, epoch, &mut g)? as f64;
                    }
                    Ok((loss, g))
                })
                .collect();
            let mut acc: Option<M> = None;
            let mut batch_loss = 0.0;
            for part in parts {
                let (l, g) = part.map_err(|e| diverged(epoch, e.to_string()))?;
                batch_loss += l;
                match acc.as_mut() {
                    None => acc = Some(g),
                    Some(a) => a.accumulate(&g),
                }
            }
            if !batch_loss.is_finite() {
                return Err(diverged(epoch, format!("non-finite loss {batch_loss}")));
            }
            let mut g = acc.expect("nonempty batch");
            g.scale_all(1.0 / batch.len() as f32);
            g.check_finite_grads().map_err(|e| diverged(epoch, e.to_string()))?;
            adam_update(model, &g, &mut adam)?;
            total += batch_loss;
        }
        let dev_score = dev(model)?;
        let loss = total / n as f64;
        log::info!(
            "{level} epoch {epoch}: loss {loss:.5}{}",
            dev_score.map(|s| format!(", dev {s:.4}")).unwrap_or_default()
        );
        history.push(EpochRecord {
            level,
            epoch,
            loss,
            dev_score,
        });
        if let Some(s) = dev_score {
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience > 0 && stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(history)
}

/// Per-utterance Level-1 training example.
pub struct Level1Example {
    pub x: Matrix<f32>,
    pub slots: Vec<usize>,
}

/// Per-utterance Level-2 training example on the gold-gated tokens.
pub struct Level2Example {
    pub x: Matrix<f32>,
    pub slots: Vec<usize>,
    pub intent: usize,
    pub feats: Vec<Vec<f32>>,
}

pub fn train_level1<D>(
    model: &mut Level1Tagger<f32>,
    data: &[Level1Example],
    cfg: &TrainConfig,
    dev: D,
) -> Result<Vec<EpochRecord>>
where
    D: FnMut(&Level1Tagger<f32>) -> Result<Option<f64>>,
{
    cfg.validate()?;
    let grad = |m: &Level1Tagger<f32>, i: usize, epoch: usize, g: &mut Level1Tagger<f32>| {
        let x = dropout(&data[i].x, cfg.dropout, cfg.seed, Level::Level1, epoch, i);
        m.loss_and_grad(&x, &data[i].slots, g)
    };
    fit(model, data.len(), cfg, Level::Level1, grad, dev)
}

pub fn train_level2<D>(
    model: &mut Level2Joint<f32>,
    data: &[Level2Example],
    cfg: &TrainConfig,
    dev: D,
) -> Result<Vec<EpochRecord>>
where
    D: FnMut(&Level2Joint<f32>) -> Result<Option<f64>>,
{
    cfg.validate()?;
    let lambda = cfg.lambda as f32;
    let grad = |m: &Level2Joint<f32>, i: usize, epoch: usize, g: &mut Level2Joint<f32>| {
        let e = &data[i];
        let x = dropout(&e.x, cfg.dropout, cfg.seed, Level::Level2, epoch, i);
        m.loss_and_grad(&x, &e.feats, &e.slots, e.intent, lambda, g)
    };
    fit(model, data.len(), cfg, Level::Level2, grad, dev)
}

fn slot_targets(c: &Corpus, u: &AnnotatedUtterance) -> Result<Vec<usize>> {
    if u.tokens.is_empty() {
        return Err(ModelError::EmptyUtterance(u.id.clone()));
    }
    if u.tokens.len() != u.slot_labels.len() {
        return Err(ModelError::LengthMismatch {
            tokens: u.tokens.len(),
            labels: u.slot_labels.len(),
        });
    }
    u.slot_labels
        .iter()
        .map(|l| {
            c.slot_inventory.index_of(l).ok_or_else(|| ModelError::UnknownLabel {
                kind: "slot",
                label: l.clone(),
            })
        })
        .collect()
}

/// Mean of intent weighted-F1 and merged slot weighted-F1 over `dev`.
pub(crate) fn pipeline_score(p: &HJoint2Pipeline, dev: &Corpus, store: Option<&FeatureStore>) -> Result<f64> {
    let results: Vec<_> = dev
        .utterances
        .par_iter()
        .map(|u| p.predict(u, store))
        .collect::<Result<_>>()?;
    let preds: Vec<&str> = results.iter().map(|r| r.intent.as_str()).collect();
    let golds: Vec<&str> = dev.utterances.iter().map(|u| u.intent.as_str()).collect();
    let intent = intent_prf(&preds, &golds).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
    let ps: Vec<Vec<String>> = results.into_iter().map(|r| r.slots).collect();
    let gs: Vec<Vec<String>> = dev.utterances.iter().map(|u| u.slot_labels.clone()).collect();
    let slots = slot_prf(&ps, &gs, true).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
    Ok((intent.weighted.f1 + slots.weighted.f1) / 2.0)
}

/// Builds an untrained pipeline with the shapes and normalization statistics
/// `train_pipeline` would use.
pub fn init_pipeline(
    train: &Corpus,
    stack: EmbeddingStack,
    store: Option<&FeatureStore>,
    fusion: FusionPolicy,
    schema: FeatureSchema,
    cfg: &TrainConfig,
) -> Result<HJoint2Pipeline> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let mods = fusion.modalities();
    let norm = if fusion.is_enabled() && fusion.normalize {
        let s = store.ok_or(crate::fusion::FusionError::MissingStore)?;
        Some(NormStats::from_training(s, train, &mods)?)
    } else {
        None
    };
    let slots_n = train.slot_inventory.len();
    let intents_n = train.intent_inventory.len();
    let input = stack.total_dim();
    let mut rng = stream_rng(cfg.seed, STREAM_INIT);
    let level1 = Level1Tagger::init(input, cfg.hidden, slots_n, &mut rng);
    let level2 = Level2Joint::init(input, cfg.hidden, slots_n, intents_n, &fusion, &schema, &mut rng);
    Ok(HJoint2Pipeline {
        stack,
        level1,
        level2,
        slot_inventory: train.slot_inventory.clone(),
        intent_inventory: train.intent_inventory.clone(),
        fusion,
        schema,
        norm,
        lambda: cfg.lambda,
    })
}

/// Trains Level-1, then Level-2 on gold gates, and assembles the pipeline.
///
/// Level-1 early-stops on dev slot weighted-F1 of its own tags; Level-2 on
/// the mean of dev intent and merged slot weighted-F1 under predicted gates.
pub fn train_pipeline(
    train: &Corpus,
    dev: Option<&Corpus>,
    stack: EmbeddingStack,
    store: Option<&FeatureStore>,
    fusion: FusionPolicy,
    schema: FeatureSchema,
    cfg: &TrainConfig,
) -> Result<(HJoint2Pipeline, TrainReport)> {
    let dev = dev.filter(|d| !d.is_empty());
    let mut pipeline = init_pipeline(train, stack, store, fusion, schema, cfg)?;
    let mut level1 = pipeline.level1.clone();
    let mut level2 = pipeline.level2.clone();
    let stack = &pipeline.stack;
    let fusion = &pipeline.fusion;
    let norm = pipeline.norm.clone();

    let mut l1_data = Vec::with_capacity(train.len());
    let mut l2_data = Vec::with_capacity(train.len());
    let none = train.slot_inventory.none_index();
    for u in &train.utterances {
        let slots = slot_targets(train, u)?;
        let intent = train
            .intent_inventory
            .index_of(&u.intent)
            .ok_or_else(|| ModelError::UnknownLabel {
                kind: "intent",
                label: u.intent.clone(),
            })?;
        let x = stack.embed_tokens(&u.tokens);
        let gate = super::gate_indices(&slots, none);
        let feats = gather_features(fusion, store, norm.as_ref(), u)?;
        l2_data.push(Level2Example {
            x: x.select_rows(&gate.indices),
            slots: gate.indices.iter().map(|&i| slots[i]).collect(),
            intent,
            feats,
        });
        l1_data.push(Level1Example { x, slots });
    }

    let dev_l1: Option<Vec<(Matrix<f32>, Vec<String>)>> = dev.map(|d| {
        d.utterances
            .iter()
            .map(|u| (stack.embed_tokens(&u.tokens), u.slot_labels.clone()))
            .collect()
    });
    let l1_score = |m: &Level1Tagger<f32>| -> Result<Option<f64>> {
        let Some(data) = &dev_l1 else { return Ok(None) };
        let preds: Vec<Vec<String>> = data
            .par_iter()
            .map(|(x, _)| {
                m.tag(x).map(|t| {
                    t.labels
                        .iter()
                        .map(|&i| train.slot_inventory.name(i).to_string())
                        .collect()
                })
            })
            .collect::<std::result::Result<_, _>>()?;
        let golds: Vec<Vec<String>> = data.iter().map(|(_, g)| g.clone()).collect();
        let t = slot_prf(&preds, &golds, true).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        Ok(Some(t.weighted.f1))
    };
    let level1_history = train_level1(&mut level1, &l1_data, cfg, l1_score)?;

    pipeline.level1 = level1;
    let level2_history = {
        let template = &pipeline;
        let l2_score = |m: &Level2Joint<f32>| -> Result<Option<f64>> {
            let Some(d) = dev else { return Ok(None) };
            let mut p = template.clone();
            p.level2 = m.clone();
            pipeline_score(&p, d, store).map(Some)
        };
        train_level2(&mut level2, &l2_data, cfg, l2_score)?
    };
    pipeline.level2 = level2;
    Ok((
        pipeline,
        TrainReport {
            level1: level1_history,
            level2: level2_history,
        },
    ))
}
