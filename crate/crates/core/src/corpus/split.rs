//! Seeded, intent-stratified partitions.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, CorpusError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Fold {
    pub train: Corpus,
    pub test: Corpus,
}

/// Largest-remainder apportionment of `total` over `weights` (which sum to 1).
pub(crate) fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Groups utterance indices by intent label, each group shuffled.
fn shuffled_groups(c: &Corpus, seed: u64) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, u) in c.utterances.iter().enumerate() {
        groups.entry(u.intent.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups
        .into_values()
        .map(|mut g| {
            g.shuffle(&mut rng);
            g
        })
        .collect()
}

/// Stratified partition into `ratios.len()` parts with exact overall sizes.
///
/// Per-class allocations are a controlled rounding of `n_class * ratio` that
/// respects both the class totals and the overall part sizes.
pub(crate) fn partition(c: &Corpus, ratios: &[f64], seed: u64, min_each: usize) -> Vec<Corpus> {
    let parts = ratios.len();
    let mut targets = apportion(c.len(), ratios);
    while let Some(empty) = targets.iter().position(|&t| t < min_each) {
        let donor = (0..parts).max_by_key(|&i| (targets[i], std::cmp::Reverse(i))).unwrap();
        if targets[donor] <= min_each {
            break;
        }
        targets[donor] -= 1;
        targets[empty] += 1;
    }

    let groups = shuffled_groups(c, seed);
    let quotas: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| ratios.iter().map(|r| r * g.len() as f64).collect())
        .collect();
    let mut alloc: Vec<Vec<usize>> = quotas
        .iter()
        .map(|row| row.iter().map(|q| q.floor() as usize).collect())
        .collect();
    let frac = |g: usize, s: usize| quotas[g][s] - quotas[g][s].floor();

    let mut col_rem: Vec<i64> = (0..parts)
        .map(|s| targets[s] as i64 - alloc.iter().map(|r| r[s] as i64).sum::<i64>())
        .collect();
    let mut row_rem: Vec<i64> = groups
        .iter()
        .zip(&alloc)
        .map(|(g, r)| g.len() as i64 - r.iter().sum::<usize>() as i64)
        .collect();

    for s in 0..parts {
        while col_rem[s] < 0 {
            let g = (0..groups.len())
                .filter(|&g| alloc[g][s] > 0)
                .min_by(|&a, &b| frac(a, s).partial_cmp(&frac(b, s)).unwrap())
                .expect("column over-allocated implies a positive cell");
            alloc[g][s] -= 1;
            row_rem[g] += 1;
            col_rem[s] += 1;
        }
    }

    let mut cells: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|g| (0..parts).map(move |s| (g, s)))
        .collect();
    cells.sort_by(|&(g1, s1), &(g2, s2)| {
        frac(g2, s2)
            .partial_cmp(&frac(g1, s1))
            .unwrap()
            .then((g1, s1).cmp(&(g2, s2)))
    });
    for &(g, s) in &cells {
        if row_rem[g] > 0 && col_rem[s] > 0 {
            alloc[g][s] += 1;
            row_rem[g] -= 1;
            col_rem[s] -= 1;
        }
    }
    for &(g, s) in &cells {
        while row_rem[g] > 0 && col_rem[s] > 0 {
            alloc[g][s] += 1;
            row_rem[g] -= 1;
            col_rem[s] -= 1;
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); parts];
    for (g, idx) in groups.iter().enumerate() {
        let mut start = 0;
        for s in 0..parts {
            members[s].extend_from_slice(&idx[start..start + alloc[g][s]]);
            start += alloc[g][s];
        }
    }
    members
        .into_iter()
        .map(|mut m| {
            m.sort_unstable();
            c.subset(m.into_iter().map(|i| c.utterances[i].clone()).collect())
        })
        .collect()
}

/// Stratified train/dev/test split, deterministic in `seed`.
pub fn split(c: &Corpus, ratios: (f64, f64, f64), seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    let r = [ratios.0, ratios.1, ratios.2];
    let sum: f64 = r.iter().sum();
    if r.iter().any(|&x| x <= 0.0 || !x.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidRatios(r.to_vec()));
    }
    if c.len() < 3 {
        return Err(CorpusError::TooSmall(c.len()));
    }
    let mut parts = partition(c, &r, seed, 1).into_iter();
    Ok((parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap()))
}

/// Stratified `(rest, held_out)` carve-out with `fraction` of `c` held out.
pub fn holdout(c: &Corpus, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::InvalidRatios(vec![1.0 - fraction, fraction]));
    }
    if c.len() < 2 {
        return Err(CorpusError::TooSmall(c.len()));
    }
    let mut parts = partition(c, &[1.0 - fraction, fraction], seed, 1).into_iter();
    Ok((parts.next().unwrap(), parts.next().unwrap()))
}

/// Stratified k-fold cross-validation folds, deterministic in `seed`.
pub fn kfold(c: &Corpus, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || k > c.len() {
        return Err(CorpusError::KOutOfRange { k, n: c.len() });
    }
    let mut fold_of = vec![0usize; c.len()];
    let mut pos = 0;
    for g in shuffled_groups(c, seed) {
        for i in g {
            fold_of[i] = pos % k;
            pos += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<_>, Vec<_>) = c.utterances.iter().zip(&fold_of).partition(|(_, &fo)| fo == f);
            Fold {
                train: c.subset(train.into_iter().map(|(u, _)| u.clone()).collect()),
                test: c.subset(test.into_iter().map(|(u, _)| u.clone()).collect()),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AnnotatedUtterance;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn corpus(intents: &[&str]) -> Corpus {
        Corpus::with_default_inventories(
            intents
                .iter()
                .enumerate()
                .map(|(i, it)| AnnotatedUtterance::new(format!("u{i}"), vec!["x".into()], vec!["None".into()], *it))
                .collect(),
        )
    }

    fn ids(c: &Corpus) -> Vec<String> {
        c.utterances.iter().map(|u| u.id.clone()).collect()
    }

    #[test]
    fn ten_utterances_split_8_1_1_deterministically() {
        let c = corpus(&[
            "Stop", "Park", "Stop", "Park", "Stop", "Other", "Stop", "Park", "Stop", "Park",
        ]);
        let (a, b, t) = split(&c, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((a.len(), b.len(), t.len()), (8, 1, 1));
        let (a2, b2, t2) = split(&c, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((ids(&a), ids(&b), ids(&t)), (ids(&a2), ids(&b2), ids(&t2)));
    }

    #[test]
    fn invalid_ratios_and_tiny_corpora() {
        let c = corpus(&["Stop"; 10]);
        assert!(matches!(
            split(&c, (0.5, 0.5, 0.5), 1),
            Err(CorpusError::InvalidRatios(_))
        ));
        assert!(matches!(
            split(&c, (1.0, 0.0, 0.0), 1),
            Err(CorpusError::InvalidRatios(_))
        ));
        assert!(matches!(
            split(&corpus(&["Stop"; 2]), (0.8, 0.1, 0.1), 1),
            Err(CorpusError::TooSmall(2))
        ));
        let (a, b, t) = split(&corpus(&["Stop"; 3]), (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((a.len(), b.len(), t.len()), (1, 1, 1));
    }

    #[test]
    fn stratification_keeps_class_balance() {
        let mut labels = vec!["Stop"; 100];
        labels.extend(vec!["Park"; 100]);
        let c = corpus(&labels);
        let (a, b, t) = split(&c, (0.8, 0.1, 0.1), 3).unwrap();
        for part in [&a, &b, &t] {
            let stop = part.utterances.iter().filter(|u| u.intent == "Stop").count() as i64;
            let park = part.len() as i64 - stop;
            assert!((stop - park).abs() <= 1, "{stop} vs {park}");
        }
        assert_eq!((a.len(), b.len(), t.len()), (160, 20, 20));
    }

    #[test]
    fn kfold_contract() {
        let c = corpus(&[
            "Stop", "Park", "Stop", "Park", "Stop", "Other", "Stop", "Park", "Stop", "Park",
        ]);
        let folds = kfold(&c, 5, 11).unwrap();
        assert_eq!(folds.len(), 5);
        let mut union = HashSet::new();
        for f in &folds {
            assert_eq!(f.test.len(), 2);
            assert_eq!(f.train.len(), 8);
            for id in ids(&f.test) {
                assert!(union.insert(id));
            }
        }
        assert_eq!(union, ids(&c).into_iter().collect());
        assert!(matches!(kfold(&c, 1, 0), Err(CorpusError::KOutOfRange { k: 1, n: 10 })));
        assert!(matches!(kfold(&c, 11, 0), Err(CorpusError::KOutOfRange { .. })));
        assert_eq!(kfold(&c, 5, 11).unwrap(), folds);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 3usize..120, seed in 0u64..1000, classes in 1usize..6) {
            let names = ["Stop", "Park", "Other", "GoFaster", "OpenDoor", "SetRoute"];
            let labels: Vec<&str> = (0..n).map(|i| names[(i * 7 + i / 3) % classes]).collect();
            let c = corpus(&labels);
            let (a, b, t) = split(&c, (0.7, 0.2, 0.1), seed).unwrap();
            prop_assert_eq!(a.len() + b.len() + t.len(), n);
            let mut all: Vec<String> = ids(&a);
            all.extend(ids(&b));
            all.extend(ids(&t));
            let set: HashSet<_> = all.iter().cloned().collect();
            prop_assert_eq!(set.len(), n);
            prop_assert!(!a.is_empty() && !b.is_empty() && !t.is_empty());
        }

        #[test]
        fn kfold_is_a_partition(n in 2usize..60, k in 2usize..8, seed in 0u64..100) {
            prop_assume!(k <= n);
            let labels: Vec<&str> = (0..n).map(|i| if i % 3 == 0 { "Stop" } else { "Park" }).collect();
            let c = corpus(&labels);
            let folds = kfold(&c, k, seed).unwrap();
            let mut seen = HashSet::new();
            for f in &folds {
                prop_assert_eq!(f.train.len() + f.test.len(), n);
                for id in ids(&f.test) { prop_assert!(seen.insert(id)); }
            }
            prop_assert_eq!(seen.len(), n);
        }
    }
}
