//! Classification and retrieval metrics, and the per-fold report that both
//! the GNN and the baseline feed.

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::labels::{LabelSet, Task};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub const MAX_K: usize = 10;

/// Global TP / (TP + FP) over rows where `mask` is set; equals accuracy for
/// single-label predictions. `None` when no row is selected.
pub fn micro_f1(preds: &[usize], golds: &[usize], mask: &[bool]) -> Option<f64> {
    assert!(preds.len() == golds.len() && golds.len() == mask.len());
    let mut n = 0usize;
    let mut correct = 0usize;
    for ((&p, &g), &m) in preds.iter().zip(golds).zip(mask) {
        if m {
            n += 1;
            correct += usize::from(p == g);
        }
    }
    (n > 0).then(|| correct as f64 / n as f64)
}

/// Unweighted mean of per-class F1 over all `classes`. A class with no
/// predictions and no golds scores 0.
pub fn macro_f1(preds: &[usize], golds: &[usize], mask: &[bool], classes: usize) -> Option<f64> {
    assert!(preds.len() == golds.len() && golds.len() == mask.len());
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    let mut any = false;
    for ((&p, &g), &m) in preds.iter().zip(golds).zip(mask) {
        if !m {
            continue;
        }
        any = true;
        if p == g {
            tp[g] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    if !any {
        return None;
    }
    let total: f64 = (0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Some(total / classes as f64)
}

fn cosine(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Precision@k and recall@k for k = 1..=`max_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Queries with at least one relevant candidate.
    pub queries: usize,
}

/// Ranks `candidates` (row indices of `reps`) for each query by descending
/// cosine similarity, ties broken by ascending `ids`, and scores the top k.
///
/// A query never retrieves itself, and queries with no relevant candidate are
/// skipped. `labels[i]` is the gold label of row `i` (`None` rows are never
/// relevant).
pub fn retrieval_at_k(
    reps: &Tensor,
    ids: &[String],
    labels: &[Option<usize>],
    queries: &[usize],
    candidates: &[usize],
    max_k: usize,
) -> Result<Retrieval> {
    if max_k == 0 || max_k > candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {max_k} out of range for {} candidates",
            candidates.len()
        )));
    }
    let norms: Vec<f64> = (0..reps.rows())
        .map(|i| reps.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut precision = vec![0.0; max_k];
    let mut recall = vec![0.0; max_k];
    let mut counted = 0usize;
    for &q in queries {
        let Some(gold) = labels[q] else { continue };
        let mut ranked: Vec<(f64, usize)> = candidates
            .iter()
            .filter(|&&c| c != q)
            .map(|&c| (cosine(reps.row(q), reps.row(c), norms[q], norms[c]), c))
            .collect();
        let relevant = ranked.iter().filter(|&&(_, c)| labels[c] == Some(gold)).count();
        if relevant == 0 {
            continue;
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| ids[a.1].cmp(&ids[b.1])));
        counted += 1;
        let mut hits = 0usize;
        for k in 1..=max_k {
            if let Some(&(_, c)) = ranked.get(k - 1) {
                hits += usize::from(labels[c] == Some(gold));
            }
            precision[k - 1] += hits as f64 / k as f64;
            recall[k - 1] += hits as f64 / relevant as f64;
        }
    }
    if counted > 0 {
        for k in 0..max_k {
            precision[k] /= counted as f64;
            recall[k] /= counted as f64;
        }
    }
    Ok(Retrieval {
        precision,
        recall,
        queries: counted,
    })
}

pub fn precision_at_k(
    reps: &Tensor,
    ids: &[String],
    labels: &[Option<usize>],
    queries: &[usize],
    candidates: &[usize],
    k: usize,
) -> Result<f64> {
    Ok(retrieval_at_k(reps, ids, labels, queries, candidates, k)?.precision[k - 1])
}

pub fn recall_at_k(
    reps: &Tensor,
    ids: &[String],
    labels: &[Option<usize>],
    queries: &[usize],
    candidates: &[usize],
    k: usize,
) -> Result<f64> {
    Ok(retrieval_at_k(reps, ids, labels, queries, candidates, k)?.recall[k - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean and population standard deviation; `None` for an empty input.
pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(MeanStd {
        mean,
        std: var.sqrt(),
        n: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub task: Task,
    pub micro_f1: Option<f64>,
    pub macro_f1: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub task: Task,
    /// Index `k - 1` holds P@k.
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub train_size: usize,
    pub validation_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_epoch: Option<usize>,
    pub classification: Vec<TaskScores>,
    pub retrieval: Vec<RetrievalScores>,
}

impl FoldMetrics {
    pub fn task(&self, task: Task) -> &TaskScores {
        &self.classification[task as usize]
    }
}

/// Scores `predicted` labels and `reps` on the `queries` rows of `g`.
/// Retrieval candidates are every Example node other than the query.
pub fn evaluate_fold(
    g: &HeteroGraph,
    fold: usize,
    train_size: usize,
    queries: &[usize],
    predicted: &[LabelSet],
    reps: &Tensor,
) -> Result<FoldMetrics> {
    let examples = g.example_indices();
    let ids: Vec<String> = g.nodes().iter().map(|n| n.id.clone()).collect();
    let mut classification = Vec::new();
    let mut retrieval = Vec::new();
    for task in Task::ALL {
        let mut preds = Vec::new();
        let mut golds = Vec::new();
        for &q in queries {
            if let (Some(gold), Some(p)) = (g.node(q).labels().get(task), predicted[q].get(task)) {
                golds.push(gold);
                preds.push(p);
            }
        }
        let mask = vec![true; golds.len()];
        classification.push(TaskScores {
            task,
            micro_f1: micro_f1(&preds, &golds, &mask),
            macro_f1: macro_f1(&preds, &golds, &mask, task.class_count()),
            support: golds.len(),
        });
        let labels: Vec<Option<usize>> = g.nodes().iter().map(|n| n.labels().get(task)).collect();
        let k = MAX_K.min(examples.len().saturating_sub(1)).max(1);
        let r = retrieval_at_k(reps, &ids, &labels, queries, &examples, k)?;
        retrieval.push(RetrievalScores {
            task,
            precision: r.precision,
            recall: r.recall,
            queries: r.queries,
        });
    }
    Ok(FoldMetrics {
        fold,
        train_size,
        validation_size: queries.len(),
        best_epoch: None,
        stop_epoch: None,
        classification,
        retrieval,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAggregate {
    pub task: Task,
    pub micro_f1: Option<MeanStd>,
    pub macro_f1: Option<MeanStd>,
    pub precision: Vec<Option<MeanStd>>,
    pub recall: Vec<Option<MeanStd>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub retrieval_pool: String,
    pub config: serde_json::Value,
    pub folds: Vec<FoldMetrics>,
    pub aggregate: Vec<TaskAggregate>,
}

pub const RETRIEVAL_POOL: &str = "validation queries against all other example nodes";

impl MetricsReport {
    pub fn new(model: impl Into<String>, config: serde_json::Value, folds: Vec<FoldMetrics>) -> Self {
        let aggregate = Task::ALL
            .iter()
            .map(|&task| {
                let collect = |f: &dyn Fn(&FoldMetrics) -> Option<f64>| {
                    let v: Vec<f64> = folds.iter().filter_map(f).collect();
                    mean_std(&v)
                };
                let k_max = folds
                    .iter()
                    .map(|f| f.retrieval[task as usize].precision.len())
                    .max()
                    .unwrap_or(0);
                let per_k = |recall: bool| -> Vec<Option<MeanStd>> {
                    (0..k_max)
                        .map(|k| {
                            collect(&|f: &FoldMetrics| {
                                let r = &f.retrieval[task as usize];
                                if r.queries == 0 {
                                    return None;
                                }
                                let v = if recall { &r.recall } else { &r.precision };
                                v.get(k).copied()
                            })
                        })
                        .collect()
                };
                TaskAggregate {
                    task,
                    micro_f1: collect(&|f: &FoldMetrics| f.task(task).micro_f1),
                    macro_f1: collect(&|f: &FoldMetrics| f.task(task).macro_f1),
                    precision: per_k(false),
                    recall: per_k(true),
                }
            })
            .collect();
        Self {
            model: model.into(),
            retrieval_pool: RETRIEVAL_POOL.to_string(),
            config,
            folds,
            aggregate,
        }
    }

    pub fn task(&self, task: Task) -> &TaskAggregate {
        &self.aggregate[task as usize]
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Fixed-width table with scores ×100.
    pub fn to_table(&self) -> String {
        let fmt = |m: &Option<MeanStd>| match m {
            Some(m) => format!("{:6.2} ± {:5.2}", 100.0 * m.mean, 100.0 * m.std),
            None => format!("{:>14}", "n/a"),
        };
        let fmt_one = |v: Option<f64>| match v {
            Some(v) => format!("{:6.2}", 100.0 * v),
            None => format!("{:>6}", "n/a"),
        };
        let mut out = String::new();
        let _ = writeln!(out, "model: {}", self.model);
        let _ = writeln!(out, "folds: {}", self.folds.len());
        let _ = writeln!(out, "retrieval pool: {}", self.retrieval_pool);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<6} {:>14} {:>14}", "task", "micro F1", "macro F1");
        for a in &self.aggregate {
            let _ = writeln!(
                out,
                "{:<6} {} {}",
                a.task.to_string(),
                fmt(&a.micro_f1),
                fmt(&a.macro_f1)
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<6} {:>4} {:>14} {:>14}", "task", "k", "P@k", "R@k");
        for a in &self.aggregate {
            for k in 0..a.precision.len() {
                let _ = writeln!(
                    out,
                    "{:<6} {:>4} {} {}",
                    a.task.to_string(),
                    k + 1,
                    fmt(&a.precision[k]),
                    fmt(&a.recall[k])
                );
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<5} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
            "fold", "CF mi", "CF ma", "IC mi", "IC ma", "Sk mi", "Sk ma"
        );
        for f in &self.folds {
            let mut line = format!("{:<5}", f.fold);
            for t in Task::ALL {
                let s = f.task(t);
                let _ = write!(line, " {} {}", fmt_one(s.micro_f1), fmt_one(s.macro_f1));
            }
            let _ = writeln!(out, "{line}");
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "config: {}",
            serde_json::to_string(&self.config).expect("config serializes")
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct() {
        let g = [0, 1, 2, 1];
        let m = [true; 4];
        assert_eq!(micro_f1(&g, &g, &m), Some(1.0));
        assert_eq!(macro_f1(&g, &g, &m, 3), Some(1.0));
    }

    #[test]
    fn small_confusion_by_hand() {
        let golds = [0, 0, 1, 2];
        let preds = [0, 1, 1, 2];
        let m = [true; 4];
        assert_eq!(micro_f1(&preds, &golds, &m), Some(0.75));
        // F1_0 = 2/3, F1_1 = 2/3, F1_2 = 1
        let want = (2.0 / 3.0 + 2.0 / 3.0 + 1.0) / 3.0;
        assert!((macro_f1(&preds, &golds, &m, 3).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn absent_classes_count_as_zero() {
        let g = [0, 0];
        let m = [true; 2];
        assert_eq!(macro_f1(&g, &g, &m, 4), Some(0.25));
    }

    #[test]
    fn empty_mask_is_absent() {
        assert_eq!(micro_f1(&[0], &[0], &[false]), None);
        assert_eq!(macro_f1(&[], &[], &[], 3), None);
    }

    #[test]
    fn masked_rows_are_ignored() {
        assert_eq!(micro_f1(&[0, 1], &[0, 0], &[true, false]), Some(1.0));
    }

    #[test]
    fn mean_std_by_hand() {
        let m = mean_std(&[0.9, 1.0, 0.95]).unwrap();
        assert!((m.mean - 0.95).abs() < 1e-12);
        assert!((m.std - 0.040824829).abs() < 1e-8);
        assert_eq!(mean_std(&[1.0, 1.0, 1.0]).unwrap().std, 0.0);
        assert!(mean_std(&[]).is_none());
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("n{i:02}")).collect()
    }

    #[test]
    fn nearest_neighbor_shares_label() {
        let reps = Tensor::matrix(4, 2, vec![1.0, 0.0, 0.9, 0.1, 0.0, 1.0, 0.1, 0.9]);
        let labels = [Some(0), Some(0), Some(1), Some(1)];
        let all = [0, 1, 2, 3];
        let r = retrieval_at_k(&reps, &ids(4), &labels, &all, &all, 3).unwrap();
        assert_eq!(r.precision[0], 1.0);
        assert_eq!(r.recall[0], 1.0);
        assert!((r.precision[2] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn exhaustive_retrieval_recalls_everything() {
        let reps = Tensor::random(&[6, 3], 1.0, 1);
        let labels = [Some(0), Some(1), Some(0), Some(1), Some(2), None];
        let all: Vec<usize> = (0..6).collect();
        let r = retrieval_at_k(&reps, &ids(6), &labels, &all, &all, 5).unwrap();
        // node 4 has no relevant candidate and node 5 no label
        assert_eq!(r.queries, 4);
        assert!((r.recall[4] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ties_rank_by_id() {
        let reps = Tensor::matrix(3, 1, vec![1.0, 1.0, 1.0]);
        let labels = [Some(0), Some(1), Some(0)];
        let r = retrieval_at_k(&reps, &ids(3), &labels, &[0], &[0, 1, 2], 1).unwrap();
        assert_eq!(r.precision[0], 0.0);
        let r = retrieval_at_k(&reps, &ids(3), &labels, &[2], &[0, 1, 2], 1).unwrap();
        assert_eq!(r.precision[0], 1.0);
    }

    #[test]
    fn k_out_of_range() {
        let reps = Tensor::zeros(&[2, 1]);
        assert!(retrieval_at_k(&reps, &ids(2), &[Some(0), Some(0)], &[0], &[0, 1], 0).is_err());
        assert!(retrieval_at_k(&reps, &ids(2), &[Some(0), Some(0)], &[0], &[0, 1], 3).is_err());
    }

    #[test]
    fn report_aggregates_folds() {
        let mk = |fold, v: f64| FoldMetrics {
            fold,
            train_size: 10,
            validation_size: 5,
            best_epoch: Some(3),
            stop_epoch: Some(9),
            classification: Task::ALL
                .iter()
                .map(|&task| TaskScores {
                    task,
                    micro_f1: Some(v),
                    macro_f1: Some(v / 2.0),
                    support: 5,
                })
                .collect(),
            retrieval: Task::ALL
                .iter()
                .map(|&task| RetrievalScores {
                    task,
                    precision: vec![v; 2],
                    recall: vec![v; 2],
                    queries: 5,
                })
                .collect(),
        };
        let report = MetricsReport::new(
            "m",
            serde_json::json!({"seed": 1}),
            vec![mk(0, 0.9), mk(1, 1.0), mk(2, 0.95)],
        );
        let a = report.task(Task::Skill);
        assert!((a.micro_f1.unwrap().mean - 0.95).abs() < 1e-12);
        assert_eq!(a.micro_f1.unwrap().n, 3);
        assert_eq!(a.precision.len(), 2);
        let table = report.to_table();
        assert!(table.contains(" 95.00 ±  4.08"), "{table}");
        let back: MetricsReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }
}
