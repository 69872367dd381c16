use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Aggregate;

pub const CSV_HEADER: &str = "modalities,features,intent_p,intent_r,intent_f1,slot_p,slot_r,slot_f1";

/// Precision, recall and F1 of one aggregate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl From<Aggregate> for Prf {
    fn from(a: Aggregate) -> Self {
        Prf {
            p: a.precision,
            r: a.recall,
            f1: a.f1,
        }
    }
}

/// One line of an ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub modalities: Vec<String>,
    pub features: String,
    pub intent: Prf,
    pub slot: Option<Prf>,
}

impl ReportRow {
    pub fn modality_label(&self) -> String {
        self.modalities.join(" & ")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = write!(
            out,
            "{},{},{:.4},{:.4},{:.4}",
            csv_field(&r.modality_label()),
            csv_field(&r.features),
            r.intent.p,
            r.intent.r,
            r.intent.f1
        );
        match r.slot {
            Some(s) => {
                let _ = writeln!(out, ",{:.4},{:.4},{:.4}", s.p, s.r, s.f1);
            }
            None => out.push_str(",,,\n"),
        }
    }
    out
}

/// Aligned table with metrics as percentages.
pub fn report_text(rows: &[ReportRow]) -> String {
    let mw = rows.iter().map(|r| r.modality_label().len()).max().unwrap_or(0).max(10);
    let fw = rows.iter().map(|r| r.features.len()).max().unwrap_or(0).max(8);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<mw$}  {:<fw$}  {:>7} {:>7} {:>7}  {:>7} {:>7} {:>7}",
        "Modalities", "Features", "I-Prec", "I-Rec", "I-F1", "S-Prec", "S-Rec", "S-F1"
    );
    let _ = writeln!(out, "{}", "-".repeat(mw + fw + 52));
    for r in rows {
        let _ = write!(
            out,
            "{:<mw$}  {:<fw$}  {:>7.2} {:>7.2} {:>7.2}",
            r.modality_label(),
            r.features,
            100.0 * r.intent.p,
            100.0 * r.intent.r,
            100.0 * r.intent.f1
        );
        match r.slot {
            Some(s) => {
                let _ = writeln!(out, "  {:>7.2} {:>7.2} {:>7.2}", 100.0 * s.p, 100.0 * s.r, 100.0 * s.f1);
            }
            None => out.push('\n'),
        }
    }
    out
}
