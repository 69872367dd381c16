//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{code, hjnt, shrink_config, small_dataset, stderr, stdout};
use hjnt_core::corpus::synth::{INTENT_COUNTS, SLOT_COUNTS};
use hjnt_core::corpus::{generate_synthetic, split, AnnotatedUtterance, SynthSpec, SyntheticData, NONE_LABEL};
use hjnt_core::embeddings::EmbeddingStack;
use hjnt_core::eval::{evaluate, intent_prf, slot_prf};
use hjnt_core::fusion::{FusionPolicy, Modality};
use hjnt_core::models::{init_pipeline, load_pipeline, save_pipeline, train_pipeline, GradCheckCase, TrainConfig};
use hjnt_core::neural::{AdamConfig, Parameters};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn stack_of(d: &SyntheticData, tables: &[usize]) -> EmbeddingStack {
    EmbeddingStack::new(tables.iter().map(|&i| Arc::new(d.tables[i].clone())).collect()).unwrap()
}

fn gradient_correctness() -> Outcome {
    let case = GradCheckCase::default();
    let shape_ok = case.hidden == 8 && case.steps <= 5 && case.input == 12 && case.fused_width == 16;
    let tmp = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let o = hjnt(tmp.path(), &["gradcheck", "--arch", "all"]);
    let elapsed = t.elapsed();
    let out = stdout(&o);
    let worst = out
        .split_whitespace()
        .filter_map(|w| w.strip_prefix("max_rel_err="))
        .map(|v| v.parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    let checks = out.lines().count();
    outcome(
        shape_ok && code(&o) == 0 && checks == 3 && worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!("{checks} checks (level-1, level-2, level-2 + 16-wide audio), max_rel_err {worst:.2e}, {elapsed:.1?}"),
    )
}

fn overfit_capacity() -> Outcome {
    let spec = SynthSpec {
        n_utterances: 50,
        seed: 1,
        ..SynthSpec::default()
    };
    let d = generate_synthetic(&spec).unwrap();
    let cfg = TrainConfig {
        hidden: 32,
        dropout: 0.0,
        batch_size: 8,
        epochs: 300,
        patience: 0,
        adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        seed: 1,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let (p, _) = train_pipeline(
        &d.corpus,
        None,
        stack_of(&d, &[0]),
        None,
        FusionPolicy::none(),
        d.store.schema(),
        &cfg,
    )
    .unwrap();
    let e = evaluate(&p, &d.corpus, None, true).unwrap();
    let (i, s) = (e.intent.weighted.f1, e.slots().weighted.f1);
    let elapsed = t.elapsed();
    outcome(
        i >= 0.99 && s >= 0.99 && elapsed < Duration::from_secs(600),
        format!("training intent wF1 {i:.4}, slot wF1 {s:.4} after 300 epochs, {elapsed:.1?}"),
    )
}

fn oracle_weighted_f1(p: &[&str], g: &[&str]) -> (BTreeMap<String, (usize, usize, usize)>, f64) {
    let labels: BTreeSet<&str> = p.iter().chain(g).copied().collect();
    let mut rows = BTreeMap::new();
    let mut acc = 0.0;
    for l in labels {
        let tp = (0..p.len()).filter(|&i| p[i] == l && g[i] == l).count();
        let pn = p.iter().filter(|&&x| x == l).count();
        let gn = g.iter().filter(|&&x| x == l).count();
        let f1 = if pn + gn == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (pn + gn) as f64
        };
        acc += f1 * gn as f64;
        rows.insert(l.to_string(), (tp, pn, gn));
    }
    (rows, acc / g.len() as f64)
}

fn metric_oracle() -> Outcome {
    const LABELS: [&str; 6] = ["A", "B", "C", "D", "E", "None"];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let k = rng.random_range(1..=6);
        let p: Vec<&str> = (0..n).map(|_| LABELS[rng.random_range(0..k)]).collect();
        let g: Vec<&str> = (0..n).map(|_| LABELS[rng.random_range(0..k)]).collect();
        let (rows, wf1) = oracle_weighted_f1(&p, &g);
        let t = intent_prf(&p, &g).unwrap();
        let s = slot_prf(std::slice::from_ref(&p), std::slice::from_ref(&g), true).unwrap();
        let exact = t.classes.len() == rows.len()
            && t.classes.iter().all(|c| {
                let (tp, pn, gn) = rows[&c.label];
                c.support == gn
                    && c.precision == if pn == 0 { 0.0 } else { tp as f64 / pn as f64 }
                    && c.recall == if gn == 0 { 0.0 } else { tp as f64 / gn as f64 }
            })
            && (t.weighted.f1 - wf1).abs() <= 1e-12
            && s == t;
        mismatches += usize::from(!exact);
    }
    let hand = intent_prf(&["A", "B", "B"], &["A", "A", "B"]).unwrap().weighted.f1;
    let hand_ok = (hand - 2.0 / 3.0).abs() < 1e-15;
    outcome(
        mismatches == 0 && hand_ok,
        format!("{mismatches} mismatches on 1000 instances; [A,A,B]/[A,B,B] weighted F1 = {hand:.6}"),
    )
}

fn gating_invariant() -> Outcome {
    let d = generate_synthetic(&SynthSpec {
        n_utterances: 80,
        seed: 2,
        ..SynthSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        hidden: 8,
        seed: 2,
        ..TrainConfig::default()
    };
    let mut p = init_pipeline(
        &d.corpus,
        stack_of(&d, &[0]),
        None,
        FusionPolicy::none(),
        d.store.schema(),
        &cfg,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (_, m) in p.level1.named_mut() {
        for v in m.as_mut_slice() {
            *v = rng.random_range(-1.5..1.5);
        }
    }
    let none = p.slot_inventory.none_index();
    p.level1.head.b.as_mut_slice()[none] += 2.0;
    let words = d.tables[0].words();
    let (mut violations, mut fallbacks) = (0, 0);
    for i in 0..1000 {
        let len = rng.random_range(1..=12);
        let tokens: Vec<String> = (0..len).map(|_| words.choose(&mut rng).unwrap().clone()).collect();
        let u = AnnotatedUtterance::new(format!("r{i}"), tokens.clone(), Vec::new(), "");
        let pred = p.predict_detailed(&u, None).unwrap();
        let r = &pred.result;
        let non_none: Vec<usize> = (0..len).filter(|&j| r.level1_slots[j] != NONE_LABEL).collect();
        let expected: Vec<usize> = if r.fallback {
            (0..len).collect()
        } else {
            non_none.clone()
        };
        let ok = pred.gate.indices == expected
            && r.fallback == non_none.is_empty()
            && pred.level2_input == p.stack.embed_tokens(&tokens).select_rows(&expected);
        violations += usize::from(!ok);
        fallbacks += usize::from(r.fallback);
    }
    outcome(
        violations == 0 && fallbacks > 0 && fallbacks < 1000,
        format!("{violations} violations over 1000 predictions ({fallbacks} fallbacks)"),
    )
}

fn embedding_width() -> Outcome {
    let d = generate_synthetic(&SynthSpec {
        n_utterances: 200,
        seed: 5,
        ..SynthSpec::default()
    })
    .unwrap();
    let s = stack_of(&d, &[0, 1, 2]);
    let dims: Vec<usize> = s.tables().iter().map(|t| t.dim()).collect();
    let oov_word = d.tables[0]
        .words()
        .iter()
        .find(|w| !d.tables[2].contains(w))
        .cloned()
        .expect("speech table covers fewer words");
    let m = s.embed_tokens(&[oov_word.as_str(), d.tables[2].words()[0].as_str()]);
    let zero_blocks = |r: usize| -> Vec<bool> {
        let row = m.row(r);
        (0..3)
            .map(|b| row[b * 100..(b + 1) * 100].iter().all(|&v| v == 0.0))
            .collect()
    };
    let (a, b) = (zero_blocks(0), zero_blocks(1));
    outcome(
        dims == [100, 100, 100]
            && s.total_dim() == 300
            && m.cols() == 300
            && a == [false, false, true]
            && b == [false, false, false],
        format!(
            "dims {dims:?} -> width {}; OOV-in-speech row zero blocks {a:?}",
            m.cols()
        ),
    )
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

fn multimodal_ordering() -> Outcome {
    let t = Instant::now();
    let mut gaps = Vec::new();
    let mut details = Vec::new();
    for seed in 1..=3u64 {
        let mut spec = SynthSpec {
            seed,
            ..SynthSpec::default()
        };
        spec.features.modalities = vec![Modality::Audio];
        let d = generate_synthetic(&spec).unwrap();
        assert_eq!(d.corpus.len(), 1331);
        let (train, dev, test) = split(&d.corpus, (0.8, 0.1, 0.1), seed).unwrap();
        let cfg = TrainConfig {
            hidden: 32,
            batch_size: 16,
            epochs: 30,
            patience: 5,
            adam: AdamConfig {
                lr: 5e-3,
                ..AdamConfig::default()
            },
            seed,
            ..TrainConfig::default()
        };
        let mut f1 = Vec::new();
        for mods in [vec![], vec![Modality::Audio]] {
            let (p, _) = train_pipeline(
                &train,
                Some(&dev),
                stack_of(&d, &[0]),
                Some(&d.store),
                FusionPolicy::new(&mods, 64),
                d.store.schema(),
                &cfg,
            )
            .unwrap();
            f1.push(evaluate(&p, &test, Some(&d.store), true).unwrap().intent.weighted.f1);
        }
        gaps.push(f1[1] - f1[0]);
        details.push(format!("seed {seed}: text {:.4} / text+audio {:.4}", f1[0], f1[1]));
    }
    let m = median(gaps);
    let elapsed = t.elapsed();
    outcome(
        m >= 0.05 && elapsed < Duration::from_secs(3600),
        format!(
            "median intent wF1 gain {:+.1} points ({}), {elapsed:.1?}",
            100.0 * m,
            details.join("; ")
        ),
    )
}

fn serialization_fidelity() -> Outcome {
    let mut spec = SynthSpec {
        n_utterances: 100,
        seed: 6,
        ..SynthSpec::default()
    };
    spec.features.modalities = vec![Modality::Audio];
    let d = generate_synthetic(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let tables: Vec<_> = d
        .tables
        .iter()
        .map(|t| {
            let path = dir.path().join(format!("{}.txt", t.name()));
            t.save(&path).unwrap();
            Arc::new(hjnt_core::embeddings::load_table(&path, t.name(), Some(t.dim())).unwrap())
        })
        .collect();
    let stack = EmbeddingStack::new(tables).unwrap();
    let cfg = TrainConfig {
        hidden: 16,
        epochs: 5,
        seed: 6,
        ..TrainConfig::default()
    };
    let (p, _) = train_pipeline(
        &d.corpus,
        None,
        stack,
        Some(&d.store),
        FusionPolicy::new(&[Modality::Audio], 16),
        d.store.schema(),
        &cfg,
    )
    .unwrap();
    let path = dir.path().join("model.bin");
    save_pipeline(&p, &path).unwrap();
    let q = load_pipeline(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let words = d.tables[0].words();
    let mut differing = 0;
    for _ in 0..100 {
        let mut u = d.corpus.utterances.choose(&mut rng).unwrap().clone();
        let n = rng.random_range(1..=12);
        u.tokens = (0..n).map(|_| words.choose(&mut rng).unwrap().clone()).collect();
        let a = p.predict(&u, Some(&d.store)).unwrap();
        let b = q.predict(&u, Some(&d.store)).unwrap();
        let bits = |r: &hjnt_core::models::NLUResult| -> Vec<u32> {
            r.intent_probs
                .iter()
                .chain(&r.slot_confidences)
                .map(|x| x.to_bits())
                .collect()
        };
        differing += usize::from(a != b || bits(&a) != bits(&b));
    }
    outcome(
        differing == 0,
        format!("{differing} of 100 reloaded predictions differ"),
    )
}

fn run_chain(root: &Path, name: &str) -> Vec<(String, String)> {
    let d = small_dataset(root, name, 120, 9);
    shrink_config(&d.join("config.json"), 12, 6, &["audio"]);
    let o = hjnt(&d, &["--config", "config.json", "train", "--out", "m.bin"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = hjnt(
        &d,
        &[
            "eval",
            "--model",
            "m.bin",
            "--corpus",
            "m.bin.test.jsonl",
            "--features",
            "features.jsonl",
            "--report",
            "r",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut files: Vec<String> = std::fs::read_dir(&d)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    files.into_iter().map(|f| (common::sha256(&d.join(&f)), f)).collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let a = run_chain(tmp.path(), "run-a");
    let b = run_chain(tmp.path(), "run-b");
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.1.as_str())
        .collect();
    outcome(
        a.len() == b.len() && a.len() >= 15 && differing.is_empty(),
        format!(
            "{} artifacts checksummed across two generate/train/eval runs, differing: {differing:?}",
            a.len()
        ),
    )
}

fn calibration() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let o = hjnt(tmp.path(), &["generate", "--out", "gen", "--modalities", "none"]);
    if code(&o) != 0 {
        return outcome(false, stderr(&o));
    }
    let o = hjnt(
        tmp.path(),
        &["stats", "--corpus", "gen/corpus.jsonl", "--format", "csv"],
    );
    let mut intents = BTreeMap::new();
    let mut slots = BTreeMap::new();
    for line in stdout(&o).lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let n: usize = f[2].parse().unwrap();
        match f[0] {
            _ if f[1] == "Total" => None,
            "intent" => intents.insert(f[1].to_string(), n),
            "slot" => slots.insert(f[1].to_string(), n),
            _ => None,
        };
    }
    let total: usize = intents.values().sum();
    let reported_total = stdout(&o)
        .lines()
        .find(|l| l.starts_with("intent,Total,"))
        .map(|l| l[13..].to_string());
    let d1_total: usize = INTENT_COUNTS.iter().map(|(_, n)| n).sum();
    let worst_intent = INTENT_COUNTS
        .iter()
        .map(|(l, n)| (intents.get(*l).copied().unwrap_or(0) as f64 / total as f64 - *n as f64 / d1_total as f64).abs())
        .fold(0.0, f64::max);
    let none_share = slots.get(NONE_LABEL).copied().unwrap_or(0) as f64 / slots.values().sum::<usize>() as f64;
    let d2_none = SLOT_COUNTS.iter().find(|(l, _)| *l == NONE_LABEL).unwrap().1 as f64
        / SLOT_COUNTS.iter().map(|(_, n)| n).sum::<usize>() as f64;
    outcome(
        total == 1331
            && reported_total.as_deref() == Some("1331")
            && worst_intent <= 0.02
            && (none_share - d2_none).abs() <= 0.05,
        format!(
            "Total {total}; largest intent proportion deviation {:.2} points; None share {:.1}% vs {:.1}%",
            100.0 * worst_intent,
            100.0 * none_share,
            100.0 * d2_none
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 9] = [
        ("gradient correctness", gradient_correctness),
        ("overfit capacity", overfit_capacity),
        ("metric oracle equivalence", metric_oracle),
        ("gating invariant", gating_invariant),
        ("embedding stack width", embedding_width),
        ("multimodal ordering", multimodal_ordering),
        ("serialization fidelity", serialization_fidelity),
        ("determinism", determinism),
        ("synthetic calibration", calibration),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        println!(
            "criterion {} {name}: {} - {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
