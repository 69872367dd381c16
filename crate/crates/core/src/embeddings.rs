//! Pretrained word/speech embedding tables in the plain text format
//! (`word v1 v2 ... vd` per line), lookup with zero-vector OOV fallback,
//! stacking into concatenated token features, and vocabulary coverage.

use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::neural::Matrix;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read embedding file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("inconsistent dimension at line {line}: expected {expected}, got {got}")]
    InconsistentDim { line: usize, expected: usize, got: usize },
    #[error("non-numeric value {token:?} at line {line}")]
    NonNumeric { line: usize, token: String },
    #[error("line {line} has a word but no vector")]
    MissingVector { line: usize },
    #[error("embedding file {0} is empty")]
    Empty(String),
    #[error("table {name} has dimension {got}, expected {expected}")]
    DimMismatch { name: String, expected: usize, got: usize },
    #[error("embedding stack has no tables")]
    EmptyStack,
    #[error("corpus has no word types")]
    EmptyCorpus,
}

pub type Result<T> = std::result::Result<T, EmbeddingError>;

/// What `lookup` returns for a word the table does not contain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovPolicy {
    #[default]
    ZeroVector,
    /// Mean of all rows in the table.
    MeanVector,
}

/// Immutable word → vector map. Keys are lowercased.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    name: String,
    dim: usize,
    words: Vec<String>,
    vocab: HashMap<String, usize>,
    matrix: Vec<f32>,
    mean: Vec<f32>,
    duplicates: usize,
    source: Option<PathBuf>,
}

impl PartialEq for EmbeddingTable {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.dim == other.dim && self.words == other.words && self.matrix == other.matrix
    }
}

/// Lookup result: the vector and whether the word was found.
#[derive(Clone, Debug, PartialEq)]
pub struct Lookup<'a> {
    pub vector: Cow<'a, [f32]>,
    pub hit: bool,
}

impl EmbeddingTable {
    /// Builds a table from `(word, vector)` rows. Words are lowercased and the
    /// first occurrence of a duplicate wins.
    pub fn from_rows(name: impl Into<String>, rows: Vec<(String, Vec<f32>)>) -> Result<Self> {
        let name = name.into();
        let dim = rows
            .first()
            .map(|(_, v)| v.len())
            .ok_or_else(|| EmbeddingError::Empty(name.clone()))?;
        if dim == 0 {
            return Err(EmbeddingError::MissingVector { line: 1 });
        }
        let mut t = Self::empty(name, dim);
        for (line, (w, v)) in rows.into_iter().enumerate() {
            if v.len() != dim {
                return Err(EmbeddingError::InconsistentDim {
                    line: line + 1,
                    expected: dim,
                    got: v.len(),
                });
            }
            t.push(w, &v);
        }
        t.finish();
        Ok(t)
    }

    fn empty(name: String, dim: usize) -> Self {
        Self {
            name,
            dim,
            words: Vec::new(),
            vocab: HashMap::new(),
            matrix: Vec::new(),
            mean: Vec::new(),
            duplicates: 0,
            source: None,
        }
    }

    fn push(&mut self, word: String, v: &[f32]) {
        let key = word.to_lowercase();
        if self.vocab.contains_key(&key) {
            self.duplicates += 1;
            return;
        }
        self.vocab.insert(key.clone(), self.words.len());
        self.words.push(key);
        self.matrix.extend_from_slice(v);
    }

    fn finish(&mut self) {
        let mut mean = vec![0f64; self.dim];
        for row in self.matrix.chunks_exact(self.dim) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
        let n = self.words.len().max(1) as f64;
        self.mean = mean.into_iter().map(|m| (m / n) as f32).collect();
        if self.duplicates > 0 {
            log::warn!(
                "embedding table {}: {} duplicate words ignored (first occurrence kept)",
                self.name,
                self.duplicates
            );
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vocab.contains_key(&word.to_lowercase())
    }

    pub fn row(&self, idx: usize) -> &[f32] {
        &self.matrix[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Exact match on the lowercased word.
    pub fn lookup(&self, word: &str, policy: OovPolicy) -> Lookup<'_> {
        match self.vocab.get(&word.to_lowercase()) {
            Some(&i) => Lookup {
                vector: Cow::Borrowed(self.row(i)),
                hit: true,
            },
            None => Lookup {
                vector: match policy {
                    OovPolicy::ZeroVector => Cow::Owned(vec![0.0; self.dim]),
                    OovPolicy::MeanVector => Cow::Borrowed(&self.mean),
                },
                hit: false,
            },
        }
    }

    /// Writes the table in the text format; values use the shortest
    /// representation that reads back to the same `f32`.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, word) in self.words.iter().enumerate() {
            w.write_all(word.as_bytes())?;
            for v in self.row(i) {
                write!(w, " {v}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        };
        let f = File::create(path).map_err(io_err)?;
        self.write_text(BufWriter::new(f)).map_err(io_err)
    }
}

/// Parses the text embedding format.
pub fn parse_table<R: BufRead>(reader: R, name: &str, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    let mut values = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| EmbeddingError::Io {
            path: name.to_string(),
            source,
        })?;
        let mut parts = line.split_ascii_whitespace();
        let Some(word) = parts.next() else { continue };
        values.clear();
        for tok in parts {
            let v: f32 = tok.parse().map_err(|_| EmbeddingError::NonNumeric {
                line: lineno,
                token: tok.to_string(),
            })?;
            values.push(v);
        }
        if values.is_empty() {
            return Err(EmbeddingError::MissingVector { line: lineno });
        }
        let t = table.get_or_insert_with(|| EmbeddingTable::empty(name.to_string(), values.len()));
        if values.len() != t.dim {
            return Err(EmbeddingError::InconsistentDim {
                line: lineno,
                expected: t.dim,
                got: values.len(),
            });
        }
        t.push(word.to_string(), &values);
    }
    let mut t = table.ok_or_else(|| EmbeddingError::Empty(name.to_string()))?;
    if let Some(expected) = expected_dim {
        if expected != t.dim {
            return Err(EmbeddingError::DimMismatch {
                name: name.to_string(),
                expected,
                got: t.dim,
            });
        }
    }
    t.finish();
    Ok(t)
}

/// Loads a table from disk; `.gz` files are decompressed transparently.
pub fn load_table(path: impl AsRef<Path>, name: &str, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let gz = path.extension().is_some_and(|e| e == "gz");
    let mut t = if gz {
        parse_table(BufReader::new(GzDecoder::new(file)), name, expected_dim)
    } else {
        parse_table(BufReader::new(file), name, expected_dim)
    }
    .map_err(|e| match e {
        EmbeddingError::Empty(_) => EmbeddingError::Empty(path.display().to_string()),
        EmbeddingError::Io { source, .. } => EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })?;
    t.source = Some(path.to_path_buf());
    Ok(t)
}

/// Serializable description of one stack member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableDescriptor {
    pub name: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default)]
    pub oov: OovPolicy,
}

/// Ordered list of tables whose lookups are concatenated per token.
#[derive(Clone, Debug)]
pub struct EmbeddingStack {
    tables: Vec<Arc<EmbeddingTable>>,
    policies: Vec<OovPolicy>,
}

impl EmbeddingStack {
    pub fn new(tables: Vec<Arc<EmbeddingTable>>) -> Result<Self> {
        let policies = vec![OovPolicy::ZeroVector; tables.len()];
        Self::with_policies(tables, policies)
    }

    pub fn with_policies(tables: Vec<Arc<EmbeddingTable>>, policies: Vec<OovPolicy>) -> Result<Self> {
        if tables.is_empty() {
            return Err(EmbeddingError::EmptyStack);
        }
        assert_eq!(tables.len(), policies.len(), "one OOV policy per table");
        Ok(Self { tables, policies })
    }

    pub fn tables(&self) -> &[Arc<EmbeddingTable>] {
        &self.tables
    }

    pub fn total_dim(&self) -> usize {
        self.tables.iter().map(|t| t.dim()).sum()
    }

    /// `len(tokens) x total_dim`; row `i` concatenates every table's lookup of
    /// token `i` in stack order.
    pub fn embed_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Matrix<f32> {
        let width = self.total_dim();
        let mut m = Matrix::zeros(tokens.len(), width);
        for (r, tok) in tokens.iter().enumerate() {
            let row = m.row_mut(r);
            let mut off = 0;
            for (t, &p) in self.tables.iter().zip(&self.policies) {
                let l = t.lookup(tok.as_ref(), p);
                row[off..off + t.dim()].copy_from_slice(&l.vector);
                off += t.dim();
            }
        }
        m
    }

    pub fn describe(&self) -> Vec<TableDescriptor> {
        self.tables
            .iter()
            .zip(&self.policies)
            .map(|(t, &oov)| TableDescriptor {
                name: t.name().to_string(),
                dim: t.dim(),
                path: t.source().map(|p| p.display().to_string()),
                oov,
            })
            .collect()
    }

    /// Reloads the tables a descriptor list points at.
    pub fn load(descriptors: &[TableDescriptor]) -> Result<Self> {
        let mut tables = Vec::with_capacity(descriptors.len());
        for d in descriptors {
            let path = d.path.as_ref().ok_or_else(|| EmbeddingError::Io {
                path: format!("<table {} has no recorded path>", d.name),
                source: std::io::Error::from(std::io::ErrorKind::NotFound),
            })?;
            tables.push(Arc::new(load_table(path, &d.name, Some(d.dim))?));
        }
        Self::with_policies(tables, descriptors.iter().map(|d| d.oov).collect())
    }
}

/// Fraction of the corpus' distinct (lowercased) word types found in a table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Coverage {
    pub ratio: f64,
    pub types: usize,
    pub misses: Vec<String>,
}

pub fn coverage(table: &EmbeddingTable, corpus: &Corpus) -> Result<Coverage> {
    let types: BTreeSet<String> = corpus
        .utterances
        .iter()
        .flat_map(|u| u.tokens.iter().map(|t| t.to_lowercase()))
        .collect();
    if types.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let misses: Vec<String> = types.iter().filter(|w| !table.contains(w)).cloned().collect();
    Ok(Coverage {
        ratio: (types.len() - misses.len()) as f64 / types.len() as f64,
        types: types.len(),
        misses,
    })
}
