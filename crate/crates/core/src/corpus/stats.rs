use std::fmt::Write as _;

use serde::Serialize;

use super::{validate_corpus, Corpus};

/// Utterances per intent and words per slot label, each with a total row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatsTable {
    pub intents: Vec<(String, usize)>,
    pub intent_total: usize,
    pub slots: Vec<(String, usize)>,
    pub slot_total: usize,
}

pub fn corpus_stats(c: &Corpus) -> StatsTable {
    let report = validate_corpus(c);
    let intent_total = report.intent_counts.iter().map(|(_, n)| n).sum();
    let slot_total = report.slot_counts.iter().map(|(_, n)| n).sum();
    StatsTable {
        intents: report.intent_counts,
        intent_total,
        slots: report.slot_counts,
        slot_total,
    }
}

impl StatsTable {
    pub fn intent_count(&self, label: &str) -> usize {
        self.intents.iter().find(|(l, _)| l == label).map_or(0, |(_, n)| *n)
    }

    pub fn slot_count(&self, label: &str) -> usize {
        self.slots.iter().find(|(l, _)| l == label).map_or(0, |(_, n)| *n)
    }

    /// Two aligned plain-text tables.
    pub fn to_text(&self) -> String {
        let width = self
            .intents
            .iter()
            .chain(&self.slots)
            .map(|(l, _)| l.len())
            .max()
            .unwrap_or(0)
            .max("Slot/Keyword Type".len());
        let mut out = String::new();
        write_table(
            &mut out,
            width,
            ("Intent Type", "Utterance Count"),
            &self.intents,
            self.intent_total,
        );
        out.push('\n');
        write_table(
            &mut out,
            width,
            ("Slot/Keyword Type", "Word Count"),
            &self.slots,
            self.slot_total,
        );
        out
    }

    /// CSV with header `table,label,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("table,label,count\n");
        for (l, n) in &self.intents {
            let _ = writeln!(out, "intent,{l},{n}");
        }
        let _ = writeln!(out, "intent,Total,{}", self.intent_total);
        for (l, n) in &self.slots {
            let _ = writeln!(out, "slot,{l},{n}");
        }
        let _ = writeln!(out, "slot,Total,{}", self.slot_total);
        out
    }
}

fn write_table(out: &mut String, width: usize, head: (&str, &str), rows: &[(String, usize)], total: usize) {
    let rule = "-".repeat(width + 17);
    let _ = writeln!(out, "{:<width$}  {:>15}", head.0, head.1);
    let _ = writeln!(out, "{rule}");
    for (l, n) in rows {
        let _ = writeln!(out, "{l:<width$}  {n:>15}");
    }
    let _ = writeln!(out, "{rule}");
    let _ = writeln!(out, "{:<width$}  {total:>15}", "Total");
}
