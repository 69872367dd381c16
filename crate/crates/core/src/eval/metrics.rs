use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{EvalError, Result};
use crate::corpus::{LabelSet, NONE_LABEL};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class and aggregate precision/recall/F1. Classes are sorted by label.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricTable {
    pub classes: Vec<ClassMetrics>,
    /// Support-weighted means of the per-class rows.
    pub weighted: Aggregate,
    /// Pooled counts over the listed classes.
    pub micro: Aggregate,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl MetricTable {
    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.label == label)
    }

    /// Builds the table from `(pred, gold)` pairs, keeping rows for the
    /// labels `keep` accepts.
    fn from_pairs<'a>(pairs: impl Iterator<Item = (&'a str, &'a str)>, keep: impl Fn(&str) -> bool) -> Self {
        let mut tp: BTreeMap<&str, usize> = BTreeMap::new();
        let mut pred_n: BTreeMap<&str, usize> = BTreeMap::new();
        let mut gold_n: BTreeMap<&str, usize> = BTreeMap::new();
        let mut labels = BTreeSet::new();
        for (p, g) in pairs {
            labels.insert(p);
            labels.insert(g);
            *pred_n.entry(p).or_default() += 1;
            *gold_n.entry(g).or_default() += 1;
            if p == g {
                *tp.entry(p).or_default() += 1;
            }
        }
        let get = |m: &BTreeMap<&str, usize>, l: &str| m.get(l).copied().unwrap_or(0);

        let mut classes = Vec::new();
        let (mut sum_tp, mut sum_pred, mut sum_gold) = (0, 0, 0);
        for l in labels.into_iter().filter(|l| keep(l)) {
            let (t, pn, gn) = (get(&tp, l), get(&pred_n, l), get(&gold_n, l));
            sum_tp += t;
            sum_pred += pn;
            sum_gold += gn;
            let precision = ratio(t, pn);
            let recall = ratio(t, gn);
            classes.push(ClassMetrics {
                label: l.to_string(),
                precision,
                recall,
                f1: f1(precision, recall),
                support: gn,
            });
        }

        let weighted = if sum_gold == 0 {
            log::warn!("no gold support among the scored classes; weighted metrics set to 0");
            Aggregate::default()
        } else {
            let w = |f: fn(&ClassMetrics) -> f64| {
                classes.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / sum_gold as f64
            };
            Aggregate {
                precision: w(|c| c.precision),
                recall: w(|c| c.recall),
                f1: w(|c| c.f1),
            }
        };
        let (mp, mr) = (ratio(sum_tp, sum_pred), ratio(sum_tp, sum_gold));
        MetricTable {
            classes,
            weighted,
            micro: Aggregate {
                precision: mp,
                recall: mr,
                f1: f1(mp, mr),
            },
            support: sum_gold,
        }
    }
}

/// Utterance-level intent metrics.
pub fn intent_prf<S: AsRef<str>, T: AsRef<str>>(preds: &[S], golds: &[T]) -> Result<MetricTable> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(MetricTable::from_pairs(
        preds.iter().map(AsRef::as_ref).zip(golds.iter().map(AsRef::as_ref)),
        |_| true,
    ))
}

/// Token-level slot metrics over the flattened token stream.
pub fn slot_prf<S: AsRef<str>, T: AsRef<str>>(
    preds: &[Vec<S>],
    golds: &[Vec<T>],
    include_none: bool,
) -> Result<MetricTable> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    for (i, (p, g)) in preds.iter().zip(golds).enumerate() {
        if p.len() != g.len() {
            return Err(EvalError::Misaligned {
                index: i,
                preds: p.len(),
                golds: g.len(),
            });
        }
    }
    if preds.iter().all(|p| p.is_empty()) {
        return Err(EvalError::Empty);
    }
    let pairs = preds
        .iter()
        .zip(golds)
        .flat_map(|(p, g)| p.iter().map(AsRef::as_ref).zip(g.iter().map(AsRef::as_ref)));
    Ok(MetricTable::from_pairs(pairs, |l| include_none || l != NONE_LABEL))
}

/// `m[i][j]` counts examples with gold `i` predicted as `j`.
pub fn confusion<S: AsRef<str>, T: AsRef<str>>(
    preds: &[S],
    golds: &[T],
    inventory: &LabelSet,
) -> Result<Vec<Vec<usize>>> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let idx = |l: &str| {
        inventory
            .index_of(l)
            .ok_or_else(|| EvalError::UnknownLabel(l.to_string()))
    };
    let mut m = vec![vec![0; inventory.len()]; inventory.len()];
    for (p, g) in preds.iter().zip(golds) {
        m[idx(g.as_ref())?][idx(p.as_ref())?] += 1;
    }
    Ok(m)
}
