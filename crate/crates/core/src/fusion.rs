//! Utterance-level audio/video feature vectors: storage, training-split
//! z-normalization, and the per-modality `tanh` projections whose
//! concatenation feeds the Level-2 intent head.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedUtterance, Corpus};
use crate::neural::init::INIT_SCALE;
use crate::neural::{join, DenseParams, Matrix, Parameters, Real};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("cannot access feature file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed feature record at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("wrong dimension for {id}/{modality}: got {got}, expected {expected}")]
    WrongDim {
        id: String,
        modality: Modality,
        got: usize,
        expected: usize,
    },
    #[error("duplicate feature record for {id}/{modality}")]
    DuplicateId { id: String, modality: Modality },
    #[error("utterance {id} has no {modality} feature vector")]
    MissingFeature { id: String, modality: Modality },
    #[error("normalization statistics lack modality {0}")]
    MissingStats(Modality),
    #[error("fusion policy requires a feature store but none was supplied")]
    MissingStore,
}

pub type Result<T> = std::result::Result<T, FusionError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    VideoCabin,
    VideoRoad,
}

impl Modality {
    /// Fixed concatenation order.
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::VideoCabin, Modality::VideoRoad];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::VideoCabin => "video_cabin",
            Modality::VideoRoad => "video_road",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown modality {s:?} (expected audio, video_cabin or video_road)"))
    }
}

/// Expected vector length per modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSchema {
    pub audio: usize,
    pub video_cabin: usize,
    pub video_road: usize,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self {
            audio: 1582,
            video_cabin: 4096,
            video_road: 4096,
        }
    }
}

impl FeatureSchema {
    pub fn dim(&self, m: Modality) -> usize {
        match m {
            Modality::Audio => self.audio,
            Modality::VideoCabin => self.video_cabin,
            Modality::VideoRoad => self.video_road,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| FusionError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| FusionError::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureRecord {
    vectors: [Option<Vec<f32>>; 3],
}

impl FeatureRecord {
    pub fn get(&self, m: Modality) -> Option<&[f32]> {
        self.vectors[m.slot()].as_deref()
    }
}

/// Map from feature key (normally the utterance id) to optional per-modality
/// vectors, with dimensions enforced by the schema.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureStore {
    schema: FeatureSchema,
    records: BTreeMap<String, FeatureRecord>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    modality: Modality,
    vector: &'a [f32],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    id: String,
    modality: Modality,
    vector: Vec<f32>,
}

impl FeatureStore {
    pub fn new(schema: FeatureSchema) -> Self {
        Self {
            schema,
            records: BTreeMap::new(),
        }
    }

    pub fn schema(&self) -> FeatureSchema {
        self.schema
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, m: Modality, v: Vec<f32>) -> Result<()> {
        let id = id.into();
        let expected = self.schema.dim(m);
        if v.len() != expected {
            return Err(FusionError::WrongDim {
                id,
                modality: m,
                got: v.len(),
                expected,
            });
        }
        let rec = self.records.entry(id.clone()).or_default();
        if rec.vectors[m.slot()].is_some() {
            return Err(FusionError::DuplicateId { id, modality: m });
        }
        rec.vectors[m.slot()] = Some(v);
        Ok(())
    }

    pub fn get(&self, id: &str, m: Modality) -> Option<&[f32]> {
        self.records.get(id).and_then(|r| r.get(m))
    }

    /// The feature key an utterance uses for a modality.
    pub fn key_for(u: &AnnotatedUtterance, m: Modality) -> &str {
        let r = u.feature_refs.as_ref();
        let explicit = match m {
            Modality::Audio => r.and_then(|r| r.audio.as_deref()),
            Modality::VideoCabin => r.and_then(|r| r.video_cabin.as_deref()),
            Modality::VideoRoad => r.and_then(|r| r.video_road.as_deref()),
        };
        explicit.unwrap_or(&u.id)
    }

    pub fn resolve(&self, u: &AnnotatedUtterance, m: Modality) -> Option<&[f32]> {
        self.get(Self::key_for(u, m), m)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (id, rec) in &self.records {
            for m in Modality::ALL {
                if let Some(v) = rec.get(m) {
                    serde_json::to_writer(
                        &mut w,
                        &RecordOut {
                            id,
                            modality: m,
                            vector: v,
                        },
                    )?;
                    w.write_all(b"\n")?;
                }
            }
        }
        w.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| FusionError::Io {
            path: path.display().to_string(),
            source,
        };
        let f = File::create(path).map_err(io_err)?;
        self.write_jsonl(BufWriter::new(f)).map_err(io_err)
    }
}

pub fn parse_feature_store<R: BufRead>(reader: R, schema: FeatureSchema) -> Result<FeatureStore> {
    let mut store = FeatureStore::new(schema);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| FusionError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RecordIn = serde_json::from_str(&line).map_err(|e| FusionError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        store.insert(r.id, r.modality, r.vector)?;
    }
    Ok(store)
}

pub fn load_feature_store(path: impl AsRef<Path>, schema: FeatureSchema) -> Result<FeatureStore> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|source| FusionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_feature_store(BufReader::new(f), schema)
}

/// Per-dimension mean and floored standard deviation for each modality.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub per_modality: BTreeMap<Modality, (Vec<f32>, Vec<f32>)>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    /// Moments over the training utterances only.
    pub fn from_training(store: &FeatureStore, train: &Corpus, modalities: &[Modality]) -> Result<Self> {
        let mut per_modality = BTreeMap::new();
        for &m in modalities {
            let dim = store.schema.dim(m);
            let mut sum = vec![0f64; dim];
            let mut sq = vec![0f64; dim];
            let mut n = 0usize;
            for u in &train.utterances {
                let v = store.resolve(u, m).ok_or_else(|| FusionError::MissingFeature {
                    id: u.id.clone(),
                    modality: m,
                })?;
                for ((s, q), &x) in sum.iter_mut().zip(sq.iter_mut()).zip(v) {
                    *s += x as f64;
                    *q += x as f64 * x as f64;
                }
                n += 1;
            }
            let n = n.max(1) as f64;
            let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
            let std: Vec<f32> = sq
                .iter()
                .zip(&mean)
                .map(|(q, mu)| ((q / n - mu * mu).max(0.0).sqrt().max(STD_FLOOR)) as f32)
                .collect();
            per_modality.insert(m, (mean.into_iter().map(|v| v as f32).collect(), std));
        }
        Ok(Self { per_modality })
    }

    pub fn apply(&self, m: Modality, v: &[f32]) -> Result<Vec<f32>> {
        let (mean, std) = self.per_modality.get(&m).ok_or(FusionError::MissingStats(m))?;
        Ok(v.iter()
            .zip(mean.iter().zip(std))
            .map(|(&x, (&mu, &sd))| ((x as f64 - mu as f64) / sd as f64) as f32)
            .collect())
    }
}

/// Applies training statistics to every vector of the listed modalities.
/// Other modalities are copied unchanged.
pub fn normalize_store(store: &FeatureStore, stats: &NormStats, modalities: &[Modality]) -> Result<FeatureStore> {
    for &m in modalities {
        if !stats.per_modality.contains_key(&m) {
            return Err(FusionError::MissingStats(m));
        }
    }
    let mut out = store.clone();
    for rec in out.records.values_mut() {
        for &m in modalities {
            if let Some(v) = rec.vectors[m.slot()].as_mut() {
                *v = stats.apply(m, v)?;
            }
        }
    }
    Ok(out)
}

fn default_width() -> usize {
    64
}

fn default_true() -> bool {
    true
}

/// Which modalities feed the intent head and how wide each projection is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionPolicy {
    #[serde(default)]
    modalities: Vec<Modality>,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub widths: BTreeMap<Modality, usize>,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

impl Default for FusionPolicy {
    fn default() -> Self {
        Self::none()
    }
}

impl FusionPolicy {
    pub fn none() -> Self {
        Self {
            modalities: Vec::new(),
            width: default_width(),
            widths: BTreeMap::new(),
            normalize: true,
        }
    }

    /// Modalities are kept in canonical order without duplicates.
    pub fn new(modalities: &[Modality], width: usize) -> Self {
        let mut p = Self::none();
        p.width = width;
        p.set_modalities(modalities);
        p
    }

    pub fn set_modalities(&mut self, modalities: &[Modality]) {
        self.modalities = Modality::ALL.into_iter().filter(|m| modalities.contains(m)).collect();
    }

    pub fn modalities(&self) -> Vec<Modality> {
        Modality::ALL
            .into_iter()
            .filter(|m| self.modalities.contains(m))
            .collect()
    }

    pub fn is_enabled(&self) -> bool {
        !self.modalities.is_empty()
    }

    pub fn width_of(&self, m: Modality) -> usize {
        self.widths.get(&m).copied().unwrap_or(self.width)
    }

    pub fn fused_width(&self) -> usize {
        self.modalities().iter().map(|&m| self.width_of(m)).sum()
    }
}

/// Raw (normalized) feature vectors for one utterance, one per enabled
/// modality in canonical order.
pub fn gather_features(
    policy: &FusionPolicy,
    store: Option<&FeatureStore>,
    stats: Option<&NormStats>,
    u: &AnnotatedUtterance,
) -> Result<Vec<Vec<f32>>> {
    let mods = policy.modalities();
    if mods.is_empty() {
        return Ok(Vec::new());
    }
    let store = store.ok_or(FusionError::MissingStore)?;
    mods.into_iter()
        .map(|m| {
            let v = store.resolve(u, m).ok_or_else(|| FusionError::MissingFeature {
                id: u.id.clone(),
                modality: m,
            })?;
            match stats {
                Some(s) if policy.normalize => s.apply(m, v),
                _ => Ok(v.to_vec()),
            }
        })
        .collect()
}

/// Learned projections, one per enabled modality.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionLayer<F> {
    pub modalities: Vec<Modality>,
    pub projections: Vec<DenseParams<F>>,
}

impl<F: Real> FusionLayer<F> {
    pub fn init<R: Rng>(policy: &FusionPolicy, schema: &FeatureSchema, rng: &mut R) -> Self {
        let modalities = policy.modalities();
        let projections = modalities
            .iter()
            .map(|&m| DenseParams::init(schema.dim(m), policy.width_of(m), INIT_SCALE, rng))
            .collect();
        Self {
            modalities,
            projections,
        }
    }

    pub fn zeros(policy: &FusionPolicy, schema: &FeatureSchema) -> Self {
        let modalities = policy.modalities();
        let projections = modalities
            .iter()
            .map(|&m| DenseParams::zeros(schema.dim(m), policy.width_of(m)))
            .collect();
        Self {
            modalities,
            projections,
        }
    }

    pub fn width(&self) -> usize {
        self.projections.iter().map(|p| p.output()).sum()
    }

    /// `concat_m tanh(P_m x_m + c_m)` in canonical modality order.
    pub fn fuse(&self, inputs: &[Vec<F>]) -> Vec<F> {
        debug_assert_eq!(inputs.len(), self.projections.len());
        let mut out = Vec::with_capacity(self.width());
        for (p, x) in self.projections.iter().zip(inputs) {
            out.extend(p.forward(x).into_iter().map(|v| v.tanh()));
        }
        out
    }

    /// Backpropagates `d_fused` given the forward output `fused`.
    pub fn backward(&self, inputs: &[Vec<F>], fused: &[F], d_fused: &[F], grads: &mut FusionLayer<F>) {
        let mut off = 0;
        for ((p, x), g) in self.projections.iter().zip(inputs).zip(grads.projections.iter_mut()) {
            let w = p.output();
            let d_pre: Vec<F> = fused[off..off + w]
                .iter()
                .zip(&d_fused[off..off + w])
                .map(|(&z, &d)| d * (F::one() - z * z))
                .collect();
            p.backward(x, &d_pre, g, None);
            off += w;
        }
    }
}

impl<F: Real> Parameters<F> for FusionLayer<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix<F>)>) {
        for (m, p) in self.modalities.iter().zip(&self.projections) {
            p.visit(&join(prefix, m.as_str()), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Matrix<F>)>) {
        for (m, p) in self.modalities.iter().zip(self.projections.iter_mut()) {
            p.visit_mut(&join(prefix, m.as_str()), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AnnotatedUtterance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_schema() -> FeatureSchema {
        FeatureSchema {
            audio: 4,
            video_cabin: 3,
            video_road: 2,
        }
    }

    #[test]
    fn loads_records_and_checks_dims() {
        let audio: Vec<String> = (0..1582).map(|i| format!("{}", i as f32 * 0.01)).collect();
        let line = format!(r#"{{"id":"u1","modality":"audio","vector":[{}]}}"#, audio.join(","));
        let s = parse_feature_store(line.as_bytes(), FeatureSchema::default()).unwrap();
        assert_eq!(s.get("u1", Modality::Audio).unwrap().len(), 1582);

        let short = format!(
            r#"{{"id":"u1","modality":"audio","vector":[{}]}}"#,
            audio[..1581].join(",")
        );
        match parse_feature_store(short.as_bytes(), FeatureSchema::default()) {
            Err(FusionError::WrongDim {
                id,
                modality,
                got,
                expected,
            }) => {
                assert_eq!(
                    (id.as_str(), modality, got, expected),
                    ("u1", Modality::Audio, 1581, 1582)
                );
            }
            other => panic!("{other:?}"),
        }

        let dup = format!("{line}\n{line}");
        assert!(matches!(
            parse_feature_store(dup.as_bytes(), FeatureSchema::default()),
            Err(FusionError::DuplicateId { .. })
        ));
        assert!(matches!(
            parse_feature_store("{\"id\":1}".as_bytes(), FeatureSchema::default()),
            Err(FusionError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let mut s = FeatureStore::new(small_schema());
        s.insert("a", Modality::Audio, vec![0.1, -2.0, 3.5e-8, 1e20]).unwrap();
        s.insert("a", Modality::VideoRoad, vec![1.0, 2.0]).unwrap();
        s.insert("b", Modality::VideoCabin, vec![0.0, 0.5, -0.25]).unwrap();
        let mut buf = Vec::new();
        s.write_jsonl(&mut buf).unwrap();
        assert_eq!(parse_feature_store(&buf[..], small_schema()).unwrap(), s);
    }

    fn train_corpus(n: usize) -> Corpus {
        Corpus::with_default_inventories(
            (0..n)
                .map(|i| AnnotatedUtterance::new(format!("u{i}"), vec!["x".into()], vec!["None".into()], "Other"))
                .collect(),
        )
    }

    #[test]
    fn normalization_moments_and_constant_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = FeatureStore::new(small_schema());
        for i in 0..50 {
            let v = vec![
                rng.random_range(-3.0..5.0),
                7.0,
                rng.random_range(0.0..100.0),
                rng.random_range(-1e-3..1e-3),
            ];
            s.insert(format!("u{i}"), Modality::Audio, v).unwrap();
        }
        let c = train_corpus(50);
        let stats = NormStats::from_training(&s, &c, &[Modality::Audio]).unwrap();
        let n = normalize_store(&s, &stats, &[Modality::Audio]).unwrap();
        for d in 0..4 {
            let col: Vec<f64> = (0..50)
                .map(|i| n.get(&format!("u{i}"), Modality::Audio).unwrap()[d] as f64)
                .collect();
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-6, "dim {d} mean {mean}");
            if d == 1 {
                assert!(col.iter().all(|&x| x == 0.0));
            } else {
                assert!((var - 1.0).abs() < 1e-3, "dim {d} var {var}");
            }
        }
        // Not idempotent: a second application re-centres with the raw stats.
        let twice = normalize_store(&n, &stats, &[Modality::Audio]).unwrap();
        assert_ne!(twice, n);
        assert!(matches!(
            normalize_store(&s, &stats, &[Modality::VideoRoad]),
            Err(FusionError::MissingStats(Modality::VideoRoad))
        ));
    }

    #[test]
    fn stats_use_only_training_rows() {
        let mut s = FeatureStore::new(small_schema());
        for i in 0..10 {
            s.insert(format!("u{i}"), Modality::Audio, vec![i as f32; 4]).unwrap();
        }
        let train = train_corpus(5);
        let all = train_corpus(10);
        let a = NormStats::from_training(&s, &train, &[Modality::Audio]).unwrap();
        let b = NormStats::from_training(&s, &all, &[Modality::Audio]).unwrap();
        let probe = s.get("u9", Modality::Audio).unwrap();
        assert_ne!(
            a.apply(Modality::Audio, probe).unwrap(),
            b.apply(Modality::Audio, probe).unwrap()
        );
    }

    #[test]
    fn fused_widths() {
        let schema = small_schema();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = FusionPolicy::new(&[Modality::Audio], 64);
        let layer = FusionLayer::<f64>::init(&p, &schema, &mut rng);
        assert_eq!(layer.fuse(&[vec![1.0; 4]]).len(), 64);

        let all = FusionPolicy::new(&[Modality::VideoRoad, Modality::Audio, Modality::VideoCabin], 64);
        assert_eq!(all.modalities(), Modality::ALL.to_vec());
        assert_eq!(all.fused_width(), 192);
        let layer = FusionLayer::<f64>::init(&all, &schema, &mut rng);
        let out = layer.fuse(&[vec![1.0; 4], vec![0.5; 3], vec![-1.0; 2]]);
        assert_eq!(out.len(), 192);
        assert!(out.iter().all(|v| v.abs() < 1.0));

        let none = FusionPolicy::none();
        assert_eq!(none.fused_width(), 0);
        assert!(FusionLayer::<f64>::init(&none, &schema, &mut rng).fuse(&[]).is_empty());
    }

    #[test]
    fn gather_reports_missing_inputs() {
        let u = AnnotatedUtterance::new("u1", vec!["x".into()], vec!["None".into()], "Other");
        let p = FusionPolicy::new(&[Modality::Audio], 8);
        assert!(matches!(
            gather_features(&p, None, None, &u),
            Err(FusionError::MissingStore)
        ));
        let s = FeatureStore::new(small_schema());
        assert!(matches!(
            gather_features(&p, Some(&s), None, &u),
            Err(FusionError::MissingFeature {
                modality: Modality::Audio,
                ..
            })
        ));
        assert!(gather_features(&FusionPolicy::none(), None, None, &u)
            .unwrap()
            .is_empty());
    }
}
