//! Seeded synthetic corpus, feature store and embedding tables, calibrated to
//! the AMIE in-cabin intent and slot distributions.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::split::apportion;
use super::templates::TemplateSet;
use super::{AnnotatedUtterance, Corpus, CorpusError, Result, NONE_LABEL};
use crate::embeddings::EmbeddingTable;
use crate::fusion::{FeatureSchema, FeatureStore, Modality};

/// Utterances per intent in the AMIE in-cabin dataset (1331 total).
pub const INTENT_COUNTS: [(&str, usize); 9] = [
    ("SetDestination", 311),
    ("SetRoute", 507),
    ("Park", 151),
    ("PullOver", 34),
    ("Stop", 27),
    ("GoFaster", 73),
    ("GoSlower", 41),
    ("OpenDoor", 136),
    ("Other", 51),
];

/// Words per slot label in the AMIE in-cabin dataset (12546 total).
pub const SLOT_COUNTS: [(&str, usize); 8] = [
    ("IntentKeyword", 2007),
    ("Location", 1969),
    ("PositionDirection", 1131),
    ("Person", 404),
    ("TimeGuidance", 246),
    ("GestureGaze", 167),
    ("Object", 110),
    ("None", 6512),
];

fn proportions(counts: &[(&str, usize)]) -> BTreeMap<String, f64> {
    let total: usize = counts.iter().map(|(_, n)| n).sum();
    counts
        .iter()
        .map(|(l, n)| (l.to_string(), *n as f64 / total as f64))
        .collect()
}

/// Intent-conditioned Gaussian feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSynth {
    pub schema: FeatureSchema,
    pub modalities: Vec<Modality>,
    /// Class-mean offset on informative dimensions.
    pub offset: f64,
    pub noise_std: f64,
    /// Share of dimensions that carry an intent offset, per intent.
    pub informative_fraction: f64,
}

impl Default for FeatureSynth {
    fn default() -> Self {
        Self {
            schema: FeatureSchema::default(),
            modalities: Modality::ALL.to_vec(),
            offset: 1.0,
            noise_std: 1.0,
            informative_fraction: 0.05,
        }
    }
}

/// Synthetic word and speech embedding tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSynth {
    pub dim: usize,
    /// Share of corpus word types present in the speech table, below 1.
    pub speech_coverage: f64,
    pub noise_std: f64,
}

impl Default for EmbeddingSynth {
    fn default() -> Self {
        Self {
            dim: 100,
            speech_coverage: 0.8,
            noise_std: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_utterances: usize,
    pub intent_distribution: BTreeMap<String, f64>,
    /// Target share of tokens per slot label. Only the `None` share is
    /// actively controlled; the others follow from the templates.
    pub slot_density: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<TemplateSet>,
    pub features: FeatureSynth,
    pub embeddings: EmbeddingSynth,
    /// Probability of drawing from the keyword-free template pool.
    pub ambiguous_rate: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_utterances: 1331,
            intent_distribution: proportions(&INTENT_COUNTS),
            slot_density: proportions(&SLOT_COUNTS),
            templates: None,
            features: FeatureSynth::default(),
            embeddings: EmbeddingSynth::default(),
            ambiguous_rate: 0.2,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub corpus: Corpus,
    pub store: FeatureStore,
    /// `glove` (full vocabulary), `word2vec` (full vocabulary) and
    /// `speech2vec` (most frequent words only).
    pub tables: Vec<EmbeddingTable>,
}

const MAX_FILLERS: usize = 3;

// Independent RNG streams per component.
const STREAM_CORPUS: u64 = 1;
const STREAM_FEATURES: u64 = 2;
const STREAM_EMBEDDINGS: u64 = 3;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_probs(what: &str, m: &BTreeMap<String, f64>, sum_to_one: bool) -> Result<()> {
    if m.values().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
        return Err(CorpusError::InvalidSpec(format!("{what} has a value outside [0, 1]")));
    }
    let sum: f64 = m.values().sum();
    if sum_to_one && (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidSpec(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl SynthSpec {
    pub fn validate(&self, templates: &TemplateSet, base: &Corpus) -> Result<()> {
        if self.n_utterances == 0 {
            return Err(CorpusError::InvalidSpec("n_utterances must be at least 1".into()));
        }
        check_probs("intent_distribution", &self.intent_distribution, true)?;
        check_probs("slot_density", &self.slot_density, false)?;
        for l in self.intent_distribution.keys() {
            if !base.intent_inventory.contains(l) {
                return Err(CorpusError::InvalidSpec(format!("unknown intent {l:?}")));
            }
        }
        for l in self.slot_density.keys() {
            if !base.slot_inventory.contains(l) {
                return Err(CorpusError::InvalidSpec(format!("unknown slot label {l:?}")));
            }
        }
        if !(0.0..=1.0).contains(&self.ambiguous_rate) {
            return Err(CorpusError::InvalidSpec("ambiguous_rate must lie in [0, 1]".into()));
        }
        let e = &self.embeddings;
        if e.dim == 0 || !(e.speech_coverage > 0.0 && e.speech_coverage < 1.0) {
            return Err(CorpusError::InvalidSpec(
                "embedding dim must be positive and speech_coverage in (0, 1)".into(),
            ));
        }
        let f = &self.features;
        if !(0.0..=1.0).contains(&f.informative_fraction)
            || !(f.noise_std.is_finite() && f.noise_std >= 0.0)
            || !f.offset.is_finite()
        {
            return Err(CorpusError::InvalidSpec("invalid feature noise parameters".into()));
        }
        let active = self
            .intent_distribution
            .iter()
            .filter(|(_, p)| **p > 0.0)
            .map(|(l, _)| l.as_str());
        templates.validate(&base.slot_inventory, active)
    }
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticData> {
    let default_templates;
    let templates = match &spec.templates {
        Some(t) => t,
        None => {
            default_templates = TemplateSet::default();
            &default_templates
        }
    };
    let base = Corpus::with_default_inventories(Vec::new());
    spec.validate(templates, &base)?;

    let corpus = generate_corpus(spec, templates, &base);
    let store = generate_features(spec, &corpus);
    let tables = generate_tables(spec, templates, &corpus);
    Ok(SyntheticData { corpus, store, tables })
}

fn generate_corpus(spec: &SynthSpec, templates: &TemplateSet, base: &Corpus) -> Corpus {
    let mut rng = rng_for(spec.seed, STREAM_CORPUS);
    let labels = base.intent_inventory.labels().labels();
    let weights: Vec<f64> = labels
        .iter()
        .map(|l| spec.intent_distribution.get(l).copied().unwrap_or(0.0))
        .collect();
    let counts = apportion(spec.n_utterances, &weights);
    let mut intents: Vec<&str> = labels
        .iter()
        .zip(&counts)
        .flat_map(|(l, &n)| std::iter::repeat_n(l.as_str(), n))
        .collect();
    intents.shuffle(&mut rng);

    let none_target = spec.slot_density.get(NONE_LABEL).copied();
    let (mut total, mut none) = (0usize, 0usize);
    let mut utterances = Vec::with_capacity(intents.len());
    for (i, intent) in intents.into_iter().enumerate() {
        let ambiguous = !templates.ambiguous.is_empty() && rng.random_bool(spec.ambiguous_rate);
        let pool = if ambiguous {
            &templates.ambiguous
        } else {
            &templates.intents[intent].templates
        };
        let template = &pool[rng.random_range(0..pool.len())];
        let (mut toks, mut slots) = templates.expand(intent, template, &mut rng);

        if let Some(target) = none_target {
            let mut added = 0;
            loop {
                let n = none + slots.iter().filter(|l| *l == NONE_LABEL).count();
                let t = total + toks.len();
                if added == MAX_FILLERS || templates.fillers.is_empty() || n as f64 >= target * t as f64 {
                    break;
                }
                let filler = &templates.fillers[rng.random_range(0..templates.fillers.len())];
                let words: Vec<String> = filler.split_whitespace().map(str::to_string).collect();
                let nones = vec![NONE_LABEL.to_string(); words.len()];
                if rng.random_bool(0.5) {
                    toks.splice(0..0, words);
                    slots.splice(0..0, nones);
                } else {
                    toks.extend(words);
                    slots.extend(nones);
                }
                added += 1;
            }
        }
        total += toks.len();
        none += slots.iter().filter(|l| *l == NONE_LABEL).count();
        utterances.push(AnnotatedUtterance::new(format!("u{:05}", i + 1), toks, slots, intent));
    }
    base.subset(utterances)
}

fn generate_features(spec: &SynthSpec, corpus: &Corpus) -> FeatureStore {
    let f = &spec.features;
    let mut store = FeatureStore::new(f.schema);
    let intents = corpus.intent_inventory.labels();
    for (mi, m) in Modality::ALL.into_iter().enumerate() {
        if !f.modalities.contains(&m) {
            continue;
        }
        let mut rng = rng_for(spec.seed, STREAM_FEATURES + 16 * (mi as u64 + 1));
        let dim = f.schema.dim(m);
        let k = (f.informative_fraction * dim as f64).round() as usize;
        let means: Vec<Vec<f64>> = (0..intents.len())
            .map(|_| {
                let mut mean = vec![0.0; dim];
                for d in rand::seq::index::sample(&mut rng, dim, k.min(dim)) {
                    mean[d] = f.offset;
                }
                mean
            })
            .collect();
        for u in &corpus.utterances {
            let mean = &means[intents.index_of(&u.intent).expect("generated intent")];
            let v: Vec<f32> = mean
                .iter()
                .map(|mu| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (mu + f.noise_std * z) as f32
                })
                .collect();
            store.insert(u.id.clone(), m, v).expect("generated ids are unique");
        }
    }
    store
}

fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize, std: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

fn generate_tables(spec: &SynthSpec, templates: &TemplateSet, corpus: &Corpus) -> Vec<EmbeddingTable> {
    let mut rng = rng_for(spec.seed, STREAM_EMBEDDINGS);
    let dim = spec.embeddings.dim;

    // Most frequent label per corpus word decides its category centroid.
    let mut freq: HashMap<String, usize> = HashMap::new();
    let mut label_freq: HashMap<String, BTreeMap<String, usize>> = HashMap::new();
    for u in &corpus.utterances {
        for (t, l) in u.tokens.iter().zip(&u.slot_labels) {
            let w = t.to_lowercase();
            *freq.entry(w.clone()).or_default() += 1;
            *label_freq.entry(w).or_default().entry(l.clone()).or_default() += 1;
        }
    }
    let mut vocab: BTreeSet<String> = freq.keys().cloned().collect();
    let template_words = templates
        .intents
        .values()
        .flat_map(|t| t.keywords.iter().chain(&t.templates))
        .chain(templates.lexicon.values().flatten())
        .chain(&templates.ambiguous)
        .chain(&templates.fillers);
    for phrase in template_words {
        for w in phrase.split_whitespace() {
            if !w.starts_with('{') {
                vocab.insert(w.split('/').next().unwrap_or(w).to_lowercase());
            }
        }
    }

    let slot_labels = corpus.slot_inventory.labels().labels();
    let centroids: Vec<Vec<f64>> = slot_labels.iter().map(|_| gaussian_vec(&mut rng, dim, 0.5)).collect();
    let category = |w: &str| -> usize {
        label_freq
            .get(w)
            .and_then(|m| {
                m.iter()
                    .max_by_key(|(l, n)| (**n, std::cmp::Reverse(slot_labels.iter().position(|s| s == *l))))
            })
            .and_then(|(l, _)| corpus.slot_inventory.index_of(l))
            .unwrap_or(corpus.slot_inventory.none_index())
    };
    let glove: Vec<(String, Vec<f64>)> = vocab
        .iter()
        .map(|w| {
            let c = &centroids[category(w)];
            let noise = gaussian_vec(&mut rng, dim, 0.5);
            (w.clone(), c.iter().zip(noise).map(|(a, b)| a + b).collect())
        })
        .collect();

    let transform = |rng: &mut ChaCha8Rng, words: &[&(String, Vec<f64>)]| -> Vec<(String, Vec<f32>)> {
        let scale = 1.0 / (dim as f64).sqrt();
        let w: Vec<Vec<f64>> = (0..dim).map(|_| gaussian_vec(rng, dim, scale)).collect();
        words
            .iter()
            .map(|(word, x)| {
                let v = w
                    .iter()
                    .map(|row| {
                        let y: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                        let z: f64 = StandardNormal.sample(rng);
                        (y + spec.embeddings.noise_std * z) as f32
                    })
                    .collect();
                (word.clone(), v)
            })
            .collect()
    };

    let all: Vec<&(String, Vec<f64>)> = glove.iter().collect();
    let word2vec = transform(&mut rng, &all);

    let mut ranked: Vec<(&String, usize)> = freq.iter().map(|(w, n)| (w, *n)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let types = ranked.len();
    let k =
        ((spec.embeddings.speech_coverage * types as f64).floor() as usize).clamp(1, types.saturating_sub(1).max(1));
    let top: BTreeSet<&String> = ranked.iter().take(k).map(|(w, _)| *w).collect();
    let speech_words: Vec<&(String, Vec<f64>)> = glove.iter().filter(|(w, _)| top.contains(w)).collect();
    let speech2vec = transform(&mut rng, &speech_words);

    let to_f32 = |rows: Vec<(String, Vec<f64>)>| {
        rows.into_iter()
            .map(|(w, v)| (w, v.into_iter().map(|x| x as f32).collect()))
            .collect()
    };
    vec![
        EmbeddingTable::from_rows("glove", to_f32(glove)).expect("nonempty vocabulary"),
        EmbeddingTable::from_rows("word2vec", word2vec).expect("nonempty vocabulary"),
        EmbeddingTable::from_rows("speech2vec", speech2vec).expect("nonempty vocabulary"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_stats, validate_corpus, write_corpus};
    use crate::embeddings::coverage;

    fn small(n: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            n_utterances: n,
            features: FeatureSynth {
                schema: FeatureSchema {
                    audio: 20,
                    video_cabin: 10,
                    video_road: 10,
                },
                ..FeatureSynth::default()
            },
            embeddings: EmbeddingSynth {
                dim: 8,
                ..EmbeddingSynth::default()
            },
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn default_counts_match_intent_table() {
        let d = generate_synthetic(&small(1331, 1)).unwrap();
        let s = corpus_stats(&d.corpus);
        for (l, n) in INTENT_COUNTS {
            assert_eq!(s.intent_count(l), n, "{l}");
        }
        assert_eq!(s.intent_total, 1331);
        let none = s.slot_count("None") as f64 / s.slot_total as f64;
        assert!((none - 6512.0 / 12546.0).abs() < 0.05, "None share {none}");
        assert!(validate_corpus(&d.corpus).is_valid());
        assert_eq!(s.slot_total, d.corpus.token_count());
    }

    #[test]
    fn single_intent_single_utterance() {
        let mut spec = small(1, 4);
        spec.intent_distribution = [("Stop".to_string(), 1.0)].into_iter().collect();
        let d = generate_synthetic(&spec).unwrap();
        assert_eq!(d.corpus.len(), 1);
        assert_eq!(d.corpus.utterances[0].intent, "Stop");
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let bytes = |seed| {
            let d = generate_synthetic(&small(60, seed)).unwrap();
            let mut a = Vec::new();
            write_corpus(&mut a, &d.corpus).unwrap();
            d.store.write_jsonl(&mut a).unwrap();
            for t in &d.tables {
                t.write_text(&mut a).unwrap();
            }
            a
        };
        assert_eq!(bytes(9), bytes(9));
        assert_ne!(bytes(9), bytes(10));
    }

    #[test]
    fn every_utterance_has_all_vectors() {
        let d = generate_synthetic(&small(40, 2)).unwrap();
        for u in &d.corpus.utterances {
            assert_eq!(d.store.resolve(u, Modality::Audio).unwrap().len(), 20);
            assert_eq!(d.store.resolve(u, Modality::VideoCabin).unwrap().len(), 10);
            assert_eq!(d.store.resolve(u, Modality::VideoRoad).unwrap().len(), 10);
        }
    }

    #[test]
    fn speech_table_has_lower_coverage() {
        let d = generate_synthetic(&small(200, 3)).unwrap();
        let cov: Vec<f64> = d.tables.iter().map(|t| coverage(t, &d.corpus).unwrap().ratio).collect();
        assert_eq!(cov[0], 1.0);
        assert_eq!(cov[1], 1.0);
        assert!(cov[2] < cov[0]);
        assert!(d.tables.iter().all(|t| t.dim() == 8));
    }

    #[test]
    fn spec_errors() {
        let mut spec = small(10, 1);
        spec.intent_distribution.insert("Stop".into(), 0.5);
        assert!(matches!(generate_synthetic(&spec), Err(CorpusError::InvalidSpec(_))));

        let mut spec = small(10, 1);
        let mut t = TemplateSet::default();
        t.intents.remove("Park");
        spec.templates = Some(t);
        assert!(matches!(generate_synthetic(&spec), Err(CorpusError::MissingTemplates(s)) if s == "Park"));

        assert!(matches!(
            generate_synthetic(&small(0, 1)),
            Err(CorpusError::InvalidSpec(_))
        ));
    }
}
