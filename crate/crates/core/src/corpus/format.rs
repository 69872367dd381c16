use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotatedUtterance, Corpus, CorpusError, IntentInventory, Result, SlotInventory};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    slot_inventory: Vec<String>,
    intent_inventory: Vec<String>,
}

/// Reads a corpus file. Without a header line the default inventories apply.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let corpus = parse_corpus(BufReader::new(file))?;
    if corpus.is_empty() {
        return Err(CorpusError::Empty(path.display().to_string()));
    }
    Ok(corpus)
}

/// Parses and validates corpus records; fails on the first offending line.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut slot_inventory = SlotInventory::default();
    let mut intent_inventory = IntentInventory::default();
    let mut utterances = Vec::new();
    let mut seen = HashSet::new();
    let mut first = true;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: lineno,
            msg: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if first {
            first = false;
            if trimmed.contains("\"slot_inventory\"") {
                let h: Header = serde_json::from_str(trimmed).map_err(|e| CorpusError::Malformed {
                    line: lineno,
                    msg: e.to_string(),
                })?;
                slot_inventory = SlotInventory::new(h.slot_inventory)?;
                intent_inventory = IntentInventory::new(h.intent_inventory)?;
                continue;
            }
        }
        let u: AnnotatedUtterance = serde_json::from_str(trimmed).map_err(|e| CorpusError::Malformed {
            line: lineno,
            msg: e.to_string(),
        })?;
        if u.tokens.len() != u.slot_labels.len() {
            return Err(CorpusError::LengthMismatch {
                line: lineno,
                id: u.id,
                tokens: u.tokens.len(),
                slots: u.slot_labels.len(),
            });
        }
        if u.tokens.is_empty() {
            return Err(CorpusError::EmptyUtterance { line: lineno, id: u.id });
        }
        if let Some(bad) = u.slot_labels.iter().find(|l| !slot_inventory.contains(l)) {
            return Err(CorpusError::UnknownLabel {
                line: lineno,
                kind: "slot",
                label: bad.clone(),
            });
        }
        if !intent_inventory.contains(&u.intent) {
            return Err(CorpusError::UnknownLabel {
                line: lineno,
                kind: "intent",
                label: u.intent,
            });
        }
        if !seen.insert(u.id.clone()) {
            return Err(CorpusError::DuplicateId { line: lineno, id: u.id });
        }
        utterances.push(u);
    }
    Ok(Corpus {
        utterances,
        slot_inventory,
        intent_inventory,
    })
}

/// Writes the header line followed by one record per utterance.
pub fn write_corpus<W: Write>(mut w: W, corpus: &Corpus) -> std::io::Result<()> {
    let header = Header {
        slot_inventory: corpus.slot_inventory.labels().labels().to_vec(),
        intent_inventory: corpus.intent_inventory.labels().labels().to_vec(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for u in &corpus.utterances {
        serde_json::to_writer(&mut w, u)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_corpus(BufWriter::new(file), corpus).map_err(io_err)
}
