mod common;

use hjnt_core::corpus::{AnnotatedUtterance, Corpus};
use hjnt_core::eval::{
    evaluate, report_csv, run_experiment_with, EvalError, ExperimentConfig, ExperimentData, Protocol, CSV_HEADER,
};
use hjnt_core::fusion::{FusionPolicy, Modality};
use hjnt_core::models::train_pipeline;

fn config(protocol: Protocol, fusion: FusionPolicy) -> ExperimentConfig {
    ExperimentConfig {
        corpus: None,
        features: None,
        feature_schema: common::SMALL_SCHEMA,
        embeddings: Vec::new(),
        fusion,
        train: common::quick_cfg(3, 3),
        protocol,
        include_none: true,
        seed: 5,
    }
}

fn data(n: usize) -> ExperimentData {
    let d = common::small_data(n, 2);
    ExperimentData::from_tables(d.corpus, d.tables.into_iter().take(1).collect(), Some(d.store)).unwrap()
}

#[test]
fn kfold_rows_and_summary() {
    let cfg = config(
        Protocol::Kfold {
            k: 3,
            dev_fraction: 0.2,
        },
        FusionPolicy::new(&[Modality::Audio], 8),
    );
    let data = data(90);
    let r = run_experiment_with(&cfg, &data).unwrap();
    assert_eq!(r.rows.len(), 5);
    assert_eq!(r.folds.len(), 3);
    assert_eq!(r.folds.iter().map(|f| f.test_size).sum::<usize>(), 90);
    assert!(r.folds.iter().all(|f| f.dev_size > 0));
    assert_eq!(r.rows[0].modalities, ["Text", "Audio"]);
    assert_eq!(r.rows[0].features, "Embeddings (glove) + Audio [fold 1]");
    assert!(r.rows[3].features.ends_with("[mean]") && r.rows[4].features.ends_with("[std]"));
    let mean_f1 = r.rows[..3].iter().map(|x| x.intent.f1).sum::<f64>() / 3.0;
    assert!((r.rows[3].intent.f1 - mean_f1).abs() < 1e-12);
    assert_eq!(r.config_hash.len(), 64);

    let csv = report_csv(&r.rows);
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert_eq!(csv.lines().count(), 6);

    let again = run_experiment_with(&cfg, &data).unwrap();
    assert_eq!(again.rows, r.rows);
    assert_eq!(again.config_hash, r.config_hash);
}

#[test]
fn split_protocol_and_none_variants() {
    let cfg = config(Protocol::default(), FusionPolicy::none());
    let r = run_experiment_with(&cfg, &data(60)).unwrap();
    assert_eq!(r.rows.len(), 1);
    assert_eq!(r.rows[0].modalities, ["Text"]);
    let e = &r.folds[0].evaluation;
    assert!(e.slots_with_none.class("None").is_some());
    assert!(e.slots_without_none.class("None").is_none());
    assert_eq!(r.rows[0].slot.unwrap().f1, e.slots_with_none.weighted.f1);
}

#[test]
fn fusion_without_store_is_rejected() {
    let d = common::small_data(30, 2);
    let data = ExperimentData::from_tables(d.corpus, vec![d.tables[0].clone()], None).unwrap();
    let cfg = config(Protocol::default(), FusionPolicy::new(&[Modality::Audio], 8));
    assert!(matches!(
        run_experiment_with(&cfg, &data),
        Err(EvalError::InvalidConfig(_))
    ));
}

#[test]
fn unseen_labels_are_an_inventory_mismatch() {
    let d = common::small_data(30, 2);
    let (p, _) = train_pipeline(
        &d.corpus,
        None,
        common::stack(&d, &[0]),
        None,
        FusionPolicy::none(),
        common::SMALL_SCHEMA,
        &common::quick_cfg(0, 1),
    )
    .unwrap();
    let mut c = d.corpus.clone();
    c.utterances = vec![AnnotatedUtterance::new(
        "x",
        vec!["fly".into()],
        vec!["None".into()],
        "Teleport",
    )];
    let err = evaluate(&p, &c, None, true).unwrap_err();
    assert!(
        matches!(err, EvalError::InventoryMismatch(ref m) if m.contains("Teleport")),
        "{err}"
    );
    let empty = Corpus {
        utterances: Vec::new(),
        ..c
    };
    assert!(matches!(evaluate(&p, &empty, None, true), Err(EvalError::Empty)));
}
