//! Representation export with gold labels, and a 2-D PCA companion.
//!
//! File layout: a `dim=<d>` header line, then one line per Example node:
//! `id \t space-separated values \t cf \t ic \t skill`, where a missing label
//! is written as `-`.

use crate::embed::write_row;
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::labels::{LabelSet, Task};
use crate::model::TaxonomyModel;
use crate::tensor::Tensor;

const POWER_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct ExportRow {
    pub id: String,
    pub vector: Vec<f64>,
    pub labels: LabelSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingExport {
    pub dim: usize,
    pub rows: Vec<ExportRow>,
}

/// Evaluation-mode representations of every Example node of `g`.
pub fn export_embeddings(model: &TaxonomyModel, g: &HeteroGraph, text: &Tensor) -> Result<EmbeddingExport> {
    let reps = model.node_representation(g, text)?;
    let rows = g
        .example_indices()
        .into_iter()
        .map(|i| ExportRow {
            id: g.node(i).id.clone(),
            vector: reps.row(i).to_vec(),
            labels: g.node(i).labels(),
        })
        .collect();
    Ok(EmbeddingExport { dim: reps.cols(), rows })
}

impl EmbeddingExport {
    pub fn matrix(&self) -> Tensor {
        let data = self.rows.iter().flat_map(|r| r.vector.iter().copied()).collect();
        Tensor::from_vec(vec![self.rows.len(), self.dim], data)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("dim={}\n", self.dim);
        for r in &self.rows {
            out.push_str(&r.id);
            out.push('\t');
            write_row(&mut out, &r.vector);
            for t in Task::ALL {
                out.push('\t');
                out.push_str(r.labels.get(t).map_or("-", |c| t.class_name(c)));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, message: String| Error::EmbeddingFormat { line, message };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let dim: usize = header
            .strip_prefix("dim=")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| bad(1, format!("expected header `dim=<d>`, found `{header}`")))?;
        let mut rows = Vec::new();
        for (i, line) in lines {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(bad(
                    i + 1,
                    format!("expected 5 tab-separated fields, found {}", fields.len()),
                ));
            }
            let vector = fields[1]
                .split_ascii_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| bad(i + 1, format!("invalid number `{t}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if vector.len() != dim {
                return Err(bad(i + 1, format!("expected {dim} values, found {}", vector.len())));
            }
            let mut labels = LabelSet::default();
            for (t, name) in Task::ALL.into_iter().zip(&fields[2..]) {
                if *name != "-" {
                    let c = t
                        .class_index(name)
                        .ok_or_else(|| bad(i + 1, format!("unknown {t} label `{name}`")))?;
                    labels.set(t, Some(c));
                }
            }
            rows.push(ExportRow {
                id: fields[0].to_string(),
                vector,
                labels,
            });
        }
        Ok(Self { dim, rows })
    }

    /// Projection onto the top two principal components, same row order and labels.
    pub fn pca(&self) -> EmbeddingExport {
        let projection = pca(&self.matrix(), 2);
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| ExportRow {
                id: r.id.clone(),
                vector: projection.scores.row(i).to_vec(),
                labels: r.labels,
            })
            .collect();
        EmbeddingExport { dim: 2, rows }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `[n, components]` coordinates of the centered rows.
    pub scores: Tensor,
    /// `[components, d]` unit principal axes.
    pub axes: Tensor,
    /// Variance (population) along each axis.
    pub variances: Vec<f64>,
}

/// Principal components by power iteration with deflation. The start vector
/// is fixed and each axis is signed so its largest-magnitude entry is positive,
/// which makes the result deterministic.
pub fn pca(x: &Tensor, components: usize) -> Pca {
    let (n, d) = (x.rows(), x.cols());
    let mut centered = x.clone();
    if n > 0 {
        for j in 0..d {
            let mean = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
            for i in 0..n {
                centered.row_mut(i)[j] -= mean;
            }
        }
    }
    // cov·v = Xᵀ(X v) / n, applied without forming the d×d matrix
    let apply = |v: &[f64]| -> Vec<f64> {
        let xv: Vec<f64> = (0..n)
            .map(|i| centered.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect();
        let mut out = vec![0.0; d];
        for (i, &s) in xv.iter().enumerate() {
            if s != 0.0 {
                for (o, &a) in out.iter_mut().zip(centered.row(i)) {
                    *o += s * a;
                }
            }
        }
        out.iter_mut().for_each(|o| *o /= n.max(1) as f64);
        out
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let total_variance = centered.data().iter().map(|x| x * x).sum::<f64>() / n.max(1) as f64;
    let deflate = |v: &mut Vec<f64>, axes: &[Vec<f64>]| {
        for a in axes {
            let p = dot(v, a);
            v.iter_mut().zip(a).for_each(|(x, y)| *x -= p * y);
        }
    };

    let mut axes: Vec<Vec<f64>> = Vec::new();
    let mut variances = Vec::new();
    for c in 0..components {
        let mut v: Vec<f64> = (0..d).map(|j| 1.0 + ((j * 7 + c * 3) % 11) as f64 / 11.0).collect();
        let mut lambda = 0.0;
        for _ in 0..POWER_ITERATIONS {
            deflate(&mut v, &axes);
            let norm = dot(&v, &v).sqrt();
            if norm == 0.0 {
                break;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let mut w = apply(&v);
            deflate(&mut w, &axes);
            let next = dot(&v, &w);
            let wn = dot(&w, &w).sqrt();
            // what is left is rounding noise: no variance in the remaining subspace
            if wn <= 1e-12 * total_variance {
                lambda = 0.0;
                break;
            }
            let converged = (next - lambda).abs() <= 1e-14 * next.abs().max(1e-300);
            lambda = next;
            v = w.into_iter().map(|x| x / wn).collect();
            if converged {
                break;
            }
        }
        deflate(&mut v, &axes);
        let norm = dot(&v, &v).sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        let (imax, _) = v.iter().enumerate().fold(
            (0, 0.0f64),
            |acc, (i, &x)| {
                if x.abs() > acc.1 {
                    (i, x.abs())
                } else {
                    acc
                }
            },
        );
        if v.get(imax).is_some_and(|&x| x < 0.0) {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        variances.push(lambda.max(0.0));
        axes.push(v);
    }

    let mut scores = Tensor::zeros(&[n, components]);
    for i in 0..n {
        for (c, a) in axes.iter().enumerate() {
            scores.row_mut(i)[c] = dot(centered.row(i), a);
        }
    }
    let axes_t = Tensor::from_vec(vec![components, d], axes.into_iter().flatten().collect());
    Pca {
        scores,
        axes: axes_t,
        variances,
    }
}
