use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{gate_indices, Gate, Level1Tagger, Level2Joint, ModelError, NLUResult, Result};
use crate::corpus::{AnnotatedUtterance, IntentInventory, SlotInventory};
use crate::embeddings::{EmbeddingStack, TableDescriptor};
use crate::fusion::{gather_features, FeatureSchema, FeatureStore, FusionPolicy, NormStats};
use crate::neural::tensorfile::{read_tensors, write_tensors, TensorFileError, FORMAT_VERSION};
use crate::neural::{Matrix, Parameters};

pub const GATING_POLICY: &str = "non-none-predicted";
pub const FALLBACK_POLICY: &str = "full-sequence";
const ARCHITECTURE: &str = "h-joint-2";

/// A trained two-level model together with everything needed to embed and
/// score new utterances.
#[derive(Clone, Debug)]
pub struct HJoint2Pipeline {
    pub stack: EmbeddingStack,
    pub level1: Level1Tagger<f32>,
    pub level2: Level2Joint<f32>,
    pub slot_inventory: SlotInventory,
    pub intent_inventory: IntentInventory,
    pub fusion: FusionPolicy,
    pub schema: FeatureSchema,
    /// Training-split statistics, present when fusion normalizes.
    pub norm: Option<NormStats>,
    pub lambda: f64,
}

/// A prediction plus the exact positions the Level-2 model consumed.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub result: NLUResult,
    pub gate: Gate,
    /// Level-2 input rows, i.e. the embedded tokens at `gate.indices`.
    pub level2_input: Matrix<f32>,
}

impl HJoint2Pipeline {
    pub fn predict(&self, u: &AnnotatedUtterance, store: Option<&FeatureStore>) -> Result<NLUResult> {
        Ok(self.predict_detailed(u, store)?.result)
    }

    pub fn predict_detailed(&self, u: &AnnotatedUtterance, store: Option<&FeatureStore>) -> Result<Prediction> {
        if u.tokens.is_empty() {
            return Err(ModelError::EmptyUtterance(u.id.clone()));
        }
        let feats = gather_features(&self.fusion, store, self.norm.as_ref(), u)?;
        let x = self.stack.embed_tokens(&u.tokens);
        let l1 = self.level1.tag(&x)?;
        let none = self.slot_inventory.none_index();
        let gate = gate_indices(&l1.labels, none);
        let x2 = x.select_rows(&gate.indices);
        let out = self.level2.predict(&x2, &feats)?;

        let mut slots = vec![none; u.tokens.len()];
        let mut slot_confidences: Vec<f32> = l1.probs.iter().map(|p| p[none]).collect();
        for (k, &pos) in gate.indices.iter().enumerate() {
            let label = out.slots.labels[k];
            slots[pos] = label;
            slot_confidences[pos] = out.slots.probs[k][label];
        }
        let mut gate_mask = vec![false; u.tokens.len()];
        for &i in &gate.indices {
            gate_mask[i] = true;
        }
        let name = |i: usize| self.slot_inventory.name(i).to_string();
        let result = NLUResult {
            id: Some(u.id.clone()),
            tokens: u.tokens.clone(),
            intent: self.intent_inventory.name(out.intent).to_string(),
            confidence: out.intent_probs[out.intent],
            intent_probs: out.intent_probs,
            slots: slots.into_iter().map(name).collect(),
            slot_confidences,
            level1_slots: l1.labels.iter().map(|&i| name(i)).collect(),
            gate_mask,
            fallback: gate.fallback,
        };
        Ok(Prediction {
            result,
            gate,
            level2_input: x2,
        })
    }

    /// Prediction for raw tokens under an id; no feature references.
    pub fn predict_tokens(&self, id: &str, tokens: &[String], store: Option<&FeatureStore>) -> Result<NLUResult> {
        let u = AnnotatedUtterance::new(id, tokens.to_vec(), Vec::new(), String::new());
        self.predict(&u, store)
    }

    fn tensors(&self) -> Vec<(String, Matrix<f32>)> {
        let mut out: Vec<(String, Matrix<f32>)> = Vec::new();
        let mut named = Vec::new();
        self.level1.visit("level1", &mut named);
        self.level2.visit("level2", &mut named);
        out.extend(named.into_iter().map(|(n, m)| (n, m.clone())));
        if let Some(norm) = &self.norm {
            for (m, (mean, std)) in &norm.per_modality {
                out.push((format!("norm.{m}.mean"), Matrix::column(mean.clone())));
                out.push((format!("norm.{m}.std"), Matrix::column(std.clone())));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Architecture {
    name: String,
    input_dim: usize,
    level1_hidden: usize,
    level2_hidden: usize,
    lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    format_version: u32,
    architecture: Architecture,
    slot_inventory: Vec<String>,
    intent_inventory: Vec<String>,
    embeddings: Vec<TableDescriptor>,
    fusion: FusionPolicy,
    feature_schema: FeatureSchema,
    gating_policy: String,
    fallback_policy: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

fn model_dir(path: &Path) -> PathBuf {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    dir.canonicalize().unwrap_or_else(|_| dir.to_path_buf())
}

/// Table paths below the model directory are stored relative to it.
fn portable_descriptors(path: &Path, stack: &EmbeddingStack) -> Vec<TableDescriptor> {
    let dir = model_dir(path);
    let mut descs = stack.describe();
    for d in &mut descs {
        if let Some(p) = d.path.as_ref().and_then(|p| Path::new(p).canonicalize().ok()) {
            d.path = Some(match p.strip_prefix(&dir) {
                Ok(rel) => rel.display().to_string(),
                Err(_) => p.display().to_string(),
            });
        }
    }
    descs
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes the binary tensor file at `path` and the JSON sidecar at
/// `<path>.json`.
pub fn save_pipeline(p: &HJoint2Pipeline, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tensors = p.tensors();
    let refs: Vec<(String, &Matrix<f32>)> = tensors.iter().map(|(n, m)| (n.clone(), m)).collect();
    let f = File::create(path).map_err(io_err(path))?;
    write_tensors(BufWriter::new(f), &refs).map_err(io_err(path))?;

    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        architecture: Architecture {
            name: ARCHITECTURE.into(),
            input_dim: p.level1.bilstm.input(),
            level1_hidden: p.level1.bilstm.hidden(),
            level2_hidden: p.level2.bilstm.hidden(),
            lambda: p.lambda,
        },
        slot_inventory: p.slot_inventory.labels().labels().to_vec(),
        intent_inventory: p.intent_inventory.labels().labels().to_vec(),
        embeddings: portable_descriptors(path, &p.stack),
        fusion: p.fusion.clone(),
        feature_schema: p.schema,
        gating_policy: GATING_POLICY.into(),
        fallback_policy: FALLBACK_POLICY.into(),
    };
    let sp = sidecar_path(path);
    let f = File::create(&sp).map_err(io_err(&sp))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, &sidecar).map_err(|e| ModelError::Io {
        path: sp.display().to_string(),
        source: e.into(),
    })?;
    w.write_all(b"\n").map_err(io_err(&sp))?;
    w.flush().map_err(io_err(&sp))
}

fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let sp = sidecar_path(path);
    let text = std::fs::read_to_string(&sp).map_err(io_err(&sp))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ModelError::Corrupted(format!("sidecar {}: {e}", sp.display())))?;
    if let Some(v) = value.get("format_version").and_then(|v| v.as_u64()) {
        if v != FORMAT_VERSION as u64 {
            return Err(ModelError::VersionMismatch {
                found: v as u32,
                expected: FORMAT_VERSION,
            });
        }
    }
    serde_json::from_value(value).map_err(|e| ModelError::Corrupted(format!("sidecar {}: {e}", sp.display())))
}

/// Loads a pipeline, reloading embedding tables from the paths recorded in
/// the sidecar (relative paths resolve against the model's directory).
pub fn load_pipeline(path: impl AsRef<Path>) -> Result<HJoint2Pipeline> {
    let path = path.as_ref();
    let sidecar = read_sidecar(path)?;
    let dir = model_dir(path);
    let descs: Vec<TableDescriptor> = sidecar
        .embeddings
        .iter()
        .cloned()
        .map(|mut d| {
            d.path = d.path.map(|p| dir.join(p).display().to_string());
            d
        })
        .collect();
    let stack = EmbeddingStack::load(&descs)?;
    build(path, sidecar, stack)
}

/// Loads a pipeline with an already constructed embedding stack.
pub fn load_pipeline_with_stack(path: impl AsRef<Path>, stack: EmbeddingStack) -> Result<HJoint2Pipeline> {
    let path = path.as_ref();
    let sidecar = read_sidecar(path)?;
    build(path, sidecar, stack)
}

fn build(path: &Path, sc: Sidecar, stack: EmbeddingStack) -> Result<HJoint2Pipeline> {
    if sc.architecture.name != ARCHITECTURE {
        return Err(ModelError::Corrupted(format!(
            "unknown architecture {:?}",
            sc.architecture.name
        )));
    }
    if sc.gating_policy != GATING_POLICY || sc.fallback_policy != FALLBACK_POLICY {
        return Err(ModelError::Corrupted(format!(
            "unsupported gating/fallback policy {:?}/{:?}",
            sc.gating_policy, sc.fallback_policy
        )));
    }
    let slot_inventory =
        SlotInventory::new(sc.slot_inventory.clone()).map_err(|e| ModelError::InventoryMismatch(e.to_string()))?;
    let intent_inventory =
        IntentInventory::new(sc.intent_inventory.clone()).map_err(|e| ModelError::InventoryMismatch(e.to_string()))?;
    let arch = &sc.architecture;
    if stack.total_dim() != arch.input_dim {
        return Err(ModelError::StackMismatch {
            expected: arch.input_dim,
            got: stack.total_dim(),
        });
    }

    let f = File::open(path).map_err(io_err(path))?;
    let mut tensors: BTreeMap<String, Matrix<f32>> = read_tensors(BufReader::new(f))
        .map_err(|e| match e {
            TensorFileError::Io(source) => ModelError::Io {
                path: path.display().to_string(),
                source,
            },
            TensorFileError::VersionMismatch { found, expected } => ModelError::VersionMismatch { found, expected },
            TensorFileError::Corrupted(msg) => ModelError::Corrupted(msg),
        })?
        .into_iter()
        .collect();

    let rows = |name: &str| tensors.get(name).map(|m| m.rows());
    for (name, inv, what) in [
        ("level1.head.w", slot_inventory.len(), "slot"),
        ("level2.slot_head.w", slot_inventory.len(), "slot"),
        ("level2.intent_head.w", intent_inventory.len(), "intent"),
    ] {
        match rows(name) {
            Some(r) if r != inv => {
                return Err(ModelError::InventoryMismatch(format!(
                    "{what} inventory lists {inv} labels but {name} has {r} outputs"
                )))
            }
            Some(_) => {}
            None => return Err(ModelError::Corrupted(format!("missing tensor {name}"))),
        }
    }

    let mut level1 = Level1Tagger::zeros(arch.input_dim, arch.level1_hidden, slot_inventory.len());
    let mut level2 = Level2Joint::zeros(
        arch.input_dim,
        arch.level2_hidden,
        slot_inventory.len(),
        intent_inventory.len(),
        &sc.fusion,
        &sc.feature_schema,
    );
    let mut fill = |prefix: &str, named: Vec<(String, &mut Matrix<f32>)>| -> Result<()> {
        for (name, dst) in named {
            let full = format!("{prefix}.{name}");
            let src = tensors
                .remove(&full)
                .ok_or_else(|| ModelError::Corrupted(format!("missing tensor {full}")))?;
            if src.shape() != dst.shape() {
                return Err(ModelError::Corrupted(format!(
                    "tensor {full} has shape {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src;
        }
        Ok(())
    };
    fill("level1", level1.named_mut())?;
    fill("level2", level2.named_mut())?;

    let norm = if sc.fusion.is_enabled() && sc.fusion.normalize {
        let mut per_modality = BTreeMap::new();
        for m in sc.fusion.modalities() {
            let mut take = |stat: &str| -> Result<Vec<f32>> {
                let name = format!("norm.{m}.{stat}");
                let t = tensors
                    .remove(&name)
                    .ok_or_else(|| ModelError::Corrupted(format!("missing tensor {name}")))?;
                if t.len() != sc.feature_schema.dim(m) {
                    return Err(ModelError::Corrupted(format!("tensor {name} has {} entries", t.len())));
                }
                Ok(t.into_vec())
            };
            let mean = take("mean")?;
            let std = take("std")?;
            per_modality.insert(m, (mean, std));
        }
        Some(NormStats { per_modality })
    } else {
        None
    };
    if let Some(extra) = tensors.keys().find(|k| !k.starts_with("norm.")) {
        return Err(ModelError::Corrupted(format!("unexpected tensor {extra}")));
    }

    Ok(HJoint2Pipeline {
        stack,
        level1,
        level2,
        slot_inventory,
        intent_inventory,
        fusion: sc.fusion,
        schema: sc.feature_schema,
        norm,
        lambda: arch.lambda,
    })
}
