//! Per-node text features: a built-in signed feature-hashing embedder and a
//! loader for externally computed embedding files.
//!
//! Embedding file layout (UTF-8):
//!
//! ```text
//! dim=<d>
//! <node_id>\t<f_0> <f_1> ... <f_{d-1}>
//! ```

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use xxhash_rust::xxh64::xxh64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Hashing,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub dim: usize,
    /// Longest word n-gram hashed (1 = unigrams, 2 = unigrams and bigrams).
    pub ngram_max: usize,
    pub seed: u64,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hashing,
            dim: 768,
            ngram_max: 2,
            seed: 0,
        }
    }
}

impl EmbedderSpec {
    pub fn hashing(dim: usize) -> Self {
        Self { dim, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be positive".into()));
        }
        if !(1..=2).contains(&self.ngram_max) {
            return Err(Error::InvalidArgument(format!(
                "ngram_max must be 1 or 2, got {}",
                self.ngram_max
            )));
        }
        Ok(())
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Signed feature hashing of word unigrams (and bigrams), L2-normalized.
/// Text without tokens maps to the zero vector.
pub fn hash_embed(text: &str, spec: &EmbedderSpec) -> Vec<f64> {
    let mut out = vec![0.0; spec.dim];
    let tokens = tokenize(text);
    let mut add = |gram: &str| {
        let h = xxh64(gram.as_bytes(), spec.seed);
        let bucket = (h % spec.dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        out[bucket] += sign;
    };
    for t in &tokens {
        add(t);
    }
    if spec.ngram_max >= 2 {
        for pair in tokens.windows(2) {
            add(&format!("{} {}", pair[0], pair[1]));
        }
    }
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|x| *x /= norm);
    }
    out
}

/// Node id → feature row, all rows of one width.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn insert(&mut self, id: &str, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Shape(format!(
                "row for {id} has {} values, table dim is {}",
                row.len(),
                self.dim
            )));
        }
        if self.index.contains_key(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        self.index.insert(id.to_string(), self.ids.len());
        self.ids.push(id.to_string());
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// Feature matrix in graph node order.
    pub fn features(&self, g: &HeteroGraph) -> Result<Tensor> {
        let mut data = Vec::with_capacity(g.len() * self.dim);
        for node in g.nodes() {
            let row = self
                .get(&node.id)
                .ok_or_else(|| Error::MissingEmbedding(node.id.clone()))?;
            data.extend_from_slice(row);
        }
        Ok(Tensor::from_vec(vec![g.len(), self.dim], data))
    }

    /// Parses the textual format without checking graph coverage.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::EmbeddingFormat {
            line: 0,
            message: e.to_string(),
        })?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::EmbeddingFormat {
            line: 1,
            message: "empty file".into(),
        })?;
        let dim: usize = header
            .trim()
            .strip_prefix("dim=")
            .and_then(|d| d.parse().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::EmbeddingFormat {
                line: 1,
                message: format!("expected header `dim=<d>`, found `{header}`"),
            })?;
        let mut table = Self::new(dim);
        let mut row = Vec::with_capacity(dim);
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (id, values) = line.split_once('\t').ok_or_else(|| Error::EmbeddingFormat {
                line: line_no,
                message: "expected `<id>\\t<values>`".into(),
            })?;
            row.clear();
            for tok in values.split_ascii_whitespace() {
                let v: f64 = tok.parse().map_err(|_| Error::EmbeddingFormat {
                    line: line_no,
                    message: format!("invalid number `{tok}`"),
                })?;
                row.push(v);
            }
            if row.len() != dim {
                return Err(Error::EmbeddingFormat {
                    line: line_no,
                    message: format!("expected {dim} values, found {}", row.len()),
                });
            }
            if table.index.contains_key(id) {
                return Err(Error::EmbeddingFormat {
                    line: line_no,
                    message: format!("duplicate id `{id}`"),
                });
            }
            table.insert(id, &row)?;
        }
        Ok(table)
    }

    /// Serializes in insertion order. Values use the shortest round-trip
    /// decimal form, so parsing the output reproduces every bit.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 12);
        writeln!(out, "dim={}", self.dim).unwrap();
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(id);
            out.push('\t');
            write_row(&mut out, &self.data[i * self.dim..(i + 1) * self.dim]);
            out.push('\n');
        }
        out
    }
}

pub(crate) fn write_row(out: &mut String, row: &[f64]) {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            out.push(' ');
        }
        write!(out, "{v:?}").unwrap();
    }
}

/// Loads an embedding file and checks it covers exactly the nodes of `g`.
pub fn load_embeddings(bytes: &[u8], g: &HeteroGraph) -> Result<EmbeddingTable> {
    let table = EmbeddingTable::parse(bytes)?;
    if let Some(extra) = table.ids.iter().find(|id| g.index_of(id).is_none()) {
        return Err(Error::UnexpectedEmbedding(extra.clone()));
    }
    if let Some(missing) = g.nodes().iter().find(|n| table.get(&n.id).is_none()) {
        return Err(Error::MissingEmbedding(missing.id.clone()));
    }
    Ok(table)
}

pub fn build_features(g: &HeteroGraph, spec: &EmbedderSpec, file: Option<&[u8]>) -> Result<EmbeddingTable> {
    spec.validate()?;
    match spec.kind {
        EmbedderKind::Hashing => {
            let mut table = EmbeddingTable::new(spec.dim);
            for node in g.nodes() {
                table.insert(&node.id, &hash_embed(&node.text, spec))?;
            }
            Ok(table)
        }
        EmbedderKind::External => {
            let bytes = file.ok_or(Error::EmbeddingFileRequired)?;
            let table = load_embeddings(bytes, g)?;
            if table.dim() != spec.dim {
                return Err(Error::Shape(format!(
                    "embedding file dim {} differs from configured dim {}",
                    table.dim(),
                    spec.dim
                )));
            }
            Ok(table)
        }
    }
}
