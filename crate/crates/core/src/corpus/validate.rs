use std::collections::HashSet;

use serde::Serialize;

use super::Corpus;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum Violation {
    DuplicateId { id: String },
    LengthMismatch { id: String, tokens: usize, slots: usize },
    EmptyTokens { id: String },
    UnknownSlotLabel { id: String, label: String },
    UnknownIntent { id: String, label: String },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Utterances per intent, in inventory order.
    pub intent_counts: Vec<(String, usize)>,
    /// Tokens per slot label, in inventory order.
    pub slot_counts: Vec<(String, usize)>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every corpus invariant; violations are collected, never raised.
pub fn validate_corpus(c: &Corpus) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    let mut intent_counts = vec![0usize; c.intent_inventory.len()];
    let mut slot_counts = vec![0usize; c.slot_inventory.len()];

    for u in &c.utterances {
        if !seen.insert(u.id.as_str()) {
            violations.push(Violation::DuplicateId { id: u.id.clone() });
        }
        if u.tokens.is_empty() {
            violations.push(Violation::EmptyTokens { id: u.id.clone() });
        }
        if u.tokens.len() != u.slot_labels.len() {
            violations.push(Violation::LengthMismatch {
                id: u.id.clone(),
                tokens: u.tokens.len(),
                slots: u.slot_labels.len(),
            });
        }
        for l in &u.slot_labels {
            match c.slot_inventory.index_of(l) {
                Some(i) => slot_counts[i] += 1,
                None => violations.push(Violation::UnknownSlotLabel {
                    id: u.id.clone(),
                    label: l.clone(),
                }),
            }
        }
        match c.intent_inventory.index_of(&u.intent) {
            Some(i) => intent_counts[i] += 1,
            None => violations.push(Violation::UnknownIntent {
                id: u.id.clone(),
                label: u.intent.clone(),
            }),
        }
    }

    let name = |labels: &[String], counts: Vec<usize>| labels.iter().cloned().zip(counts).collect();
    ValidationReport {
        violations,
        intent_counts: name(c.intent_inventory.labels().labels(), intent_counts),
        slot_counts: name(c.slot_inventory.labels().labels(), slot_counts),
    }
}
