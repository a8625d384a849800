//! Text-only reference model: TF-IDF features and one softmax regression per task.

use crate::autodiff::{Tape, Var};
use crate::embed::tokenize;
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::labels::{LabelSet, Task};
use crate::metrics::{evaluate_fold, MetricsReport};
use crate::model::LossWeights;
use crate::optim::{adam_step, AdamConfig};
use crate::split::SplitPlan;
use crate::tensor::{argmax, ParamId, ParamStore, Tensor};
use crate::train::{CrossValidation, EarlyStopping, TrainConfig, TrainHistory, Verdict};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

pub const BASELINE_LABEL: &str = "TF-IDF linear (RF stand-in)";

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfVocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    df: Vec<usize>,
    idf: Vec<f64>,
    documents: usize,
}

/// Sparse row with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Unigram vocabulary over lowercased tokens, sorted lexicographically, with
/// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`.
pub fn fit_tfidf<S: AsRef<str>>(corpus: &[S]) -> Result<TfidfVocabulary> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("cannot fit TF-IDF on an empty corpus".into()));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let mut terms = tokenize(doc.as_ref());
        terms.sort_unstable();
        terms.dedup();
        for t in terms {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = corpus.len() as f64;
    let (terms, df): (Vec<String>, Vec<usize>) = df.into_iter().unzip();
    let idf = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
    let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Ok(TfidfVocabulary {
        terms,
        index,
        df,
        idf,
        documents: corpus.len(),
    })
}

impl TfidfVocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn document_frequency(&self, i: usize) -> usize {
        self.df[i]
    }

    pub fn idf(&self, i: usize) -> f64 {
        self.idf[i]
    }

    pub fn documents(&self) -> usize {
        self.documents
    }

    /// Raw counts times idf, L2-normalized. Unknown terms are dropped.
    pub fn transform(&self, text: &str) -> SparseVector {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for t in tokenize(text) {
            if let Some(i) = self.index_of(&t) {
                *counts.entry(i).or_default() += 1;
            }
        }
        let mut v = SparseVector {
            indices: counts.keys().copied().collect(),
            values: counts.iter().map(|(&i, &c)| c as f64 * self.idf[i]).collect(),
        };
        let norm = v.norm();
        if norm > 0.0 {
            v.values.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    pub fn transform_dense<S: AsRef<str>>(&self, texts: &[S]) -> Tensor {
        let mut out = Tensor::zeros(&[texts.len(), self.len()]);
        for (r, t) in texts.iter().enumerate() {
            let v = self.transform(t.as_ref());
            let row = out.row_mut(r);
            for (&i, &x) in v.indices.iter().zip(&v.values) {
                row[i] = x;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub lambda: LossWeights,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            learning_rate: 1e-2,
            weight_decay: 1e-4,
            patience: 50,
            lambda: LossWeights::uniform(),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument(
                "baseline epochs and patience must be positive".into(),
            ));
        }
        self.adam().validate()?;
        self.lambda.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Zero-initialized `W_t [|vocab|, classes_t]` and `b_t` for each task.
#[derive(Debug, Clone)]
pub struct LinearBaseline {
    pub vocabulary: TfidfVocabulary,
    pub store: ParamStore,
    weights: [ParamId; 3],
    biases: [ParamId; 3],
}

impl LinearBaseline {
    pub fn new(vocabulary: TfidfVocabulary) -> Self {
        let mut store = ParamStore::new();
        let v = vocabulary.len();
        let mut weights = [ParamId(0); 3];
        let mut biases = [ParamId(0); 3];
        for t in Task::ALL {
            let c = t.class_count();
            weights[t as usize] = store.add(format!("baseline.{}.weight", t.as_str()), Tensor::zeros(&[v, c]));
            biases[t as usize] = store.add(format!("baseline.{}.bias", t.as_str()), Tensor::zeros(&[c]));
        }
        Self {
            vocabulary,
            store,
            weights,
            biases,
        }
    }

    pub fn weight(&self, task: Task) -> &Tensor {
        self.store.value(self.weights[task as usize])
    }

    pub fn bias(&self, task: Task) -> &Tensor {
        self.store.value(self.biases[task as usize])
    }

    fn loss(&self, tape: &mut Tape, x: &Tensor, labels: &[LabelSet], lambda: &LossWeights) -> Var {
        let xv = tape.leaf(x.clone());
        let mut total: Option<Var> = None;
        for t in Task::ALL {
            let w = lambda.get(t);
            if w == 0.0 {
                continue;
            }
            let wv = tape.param(&self.store, self.weights[t as usize]);
            let bv = tape.param(&self.store, self.biases[t as usize]);
            let z = tape.matmul(xv, wv);
            let z = tape.add_bias(z, bv);
            let ce = tape.cross_entropy(z, labels.iter().map(|l| l.get(t)).collect());
            let term = tape.scale(ce, w);
            total = Some(match total {
                Some(acc) => tape.add(acc, term),
                None => term,
            });
        }
        total.unwrap_or_else(|| tape.leaf(Tensor::scalar(0.0)))
    }

    fn loss_value(&self, x: &Tensor, labels: &[LabelSet], lambda: &LossWeights) -> f64 {
        let mut tape = Tape::new();
        let l = self.loss(&mut tape, x, labels, lambda);
        tape.value(l).item()
    }

    /// Per-task logits for each row of `x`.
    pub fn logits(&self, x: &Tensor, task: Task) -> Tensor {
        let mut z = crate::tensor::matmul(x, self.weight(task));
        let b = self.bias(task).data();
        for r in 0..z.rows() {
            for (v, bb) in z.row_mut(r).iter_mut().zip(b) {
                *v += bb;
            }
        }
        z
    }

    pub fn predict_features(&self, x: &Tensor) -> Vec<LabelSet> {
        let per_task: Vec<Tensor> = Task::ALL.iter().map(|&t| self.logits(x, t)).collect();
        (0..x.rows())
            .map(|r| {
                LabelSet::new(
                    Some(argmax(per_task[0].row(r))),
                    Some(argmax(per_task[1].row(r))),
                    Some(argmax(per_task[2].row(r))),
                )
            })
            .collect()
    }

    pub fn predict<S: AsRef<str>>(&self, texts: &[S]) -> Vec<LabelSet> {
        self.predict_features(&self.vocabulary.transform_dense(texts))
    }
}

/// Fits the vocabulary on `texts` and trains by full-batch Adam. With a
/// validation set the returned model is the best-validation-loss snapshot.
pub fn train_baseline<S: AsRef<str>>(
    texts: &[S],
    labels: &[LabelSet],
    validation: Option<(&[S], &[LabelSet])>,
    cfg: &BaselineConfig,
) -> Result<(LinearBaseline, TrainHistory)> {
    cfg.validate()?;
    if texts.len() != labels.len() {
        return Err(Error::InvalidArgument("one label set per training text".into()));
    }
    let mut model = LinearBaseline::new(fit_tfidf(texts)?);
    let x = model.vocabulary.transform_dense(texts);
    let val = validation.map(|(t, l)| (model.vocabulary.transform_dense(t), l));
    let adam = cfg.adam();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.store.values();
    let mut train_loss = Vec::new();
    let mut validation_loss = Vec::new();
    let mut stop_epoch = cfg.epochs;
    for epoch in 1..=cfg.epochs {
        let mut tape = Tape::new();
        let loss = model.loss(&mut tape, &x, labels, &cfg.lambda);
        let lv = tape.value(loss).item();
        if !lv.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        tape.backward(loss).accumulate_into(&mut model.store);
        drop(tape);
        adam_step(&mut model.store, &adam);
        train_loss.push(lv);
        let Some((vx, vl)) = &val else { continue };
        let v = model.loss_value(vx, vl, &cfg.lambda);
        validation_loss.push(v);
        match stopper.observe(epoch, v) {
            Verdict::Improved => best = model.store.values(),
            Verdict::Continue => {}
            Verdict::Stop => {
                stop_epoch = epoch;
                break;
            }
        }
    }
    if val.is_some() {
        model.store.restore(best);
    } else {
        stopper.best_epoch = cfg.epochs;
    }
    Ok((
        model,
        TrainHistory {
            train_loss,
            validation_loss,
            best_epoch: stopper.best_epoch,
            stop_epoch,
            best_validation_loss: stopper.best,
        },
    ))
}

/// Same split plan and metrics as the GNN run configured by `split`.
pub fn cross_validate_baseline(g: &HeteroGraph, split: &TrainConfig, cfg: &BaselineConfig) -> Result<CrossValidation> {
    split.validate()?;
    let plan = SplitPlan::new(g, split.test_fraction, split.folds, split.seed)?;
    let texts: Vec<&str> = g.nodes().iter().map(|n| n.text.as_str()).collect();
    let pick =
        |ids: &[usize]| -> (Vec<&str>, Vec<LabelSet>) { ids.iter().map(|&i| (texts[i], g.node(i).labels())).unzip() };
    let mut folds = Vec::new();
    let mut histories = Vec::new();
    for (i, fold) in plan.folds.iter().enumerate() {
        let (tt, tl) = pick(&fold.train);
        let (vt, vl) = pick(&fold.validation);
        let (model, history) = train_baseline(&tt, &tl, Some((&vt, &vl)), cfg)?;
        let reps = model.vocabulary.transform_dense(&texts);
        let predicted = model.predict_features(&reps);
        let mut m = evaluate_fold(g, i, fold.train.len(), &fold.validation, &predicted, &reps)?;
        m.best_epoch = Some(history.best_epoch);
        m.stop_epoch = Some(history.stop_epoch);
        folds.push(m);
        histories.push(history);
    }
    let echo = serde_json::json!({ "split": split, "baseline": cfg });
    Ok(CrossValidation {
        plan,
        histories,
        report: MetricsReport::new(BASELINE_LABEL, echo, folds),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idf_values() {
        let v = fit_tfidf(&["a b", "a c", "a", "a"]).unwrap();
        let a = v.index_of("a").unwrap();
        let b = v.index_of("b").unwrap();
        assert_eq!(v.idf(a), 1.0);
        assert!((v.idf(b) - ((5.0f64 / 2.0).ln() + 1.0)).abs() < 1e-15);
        assert!((v.idf(b) - 1.9163).abs() < 1e-4);
        assert_eq!(v.terms(), ["a", "b", "c"]);
        assert_eq!(v.document_frequency(a), 4);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(fit_tfidf::<&str>(&[]).is_err());
    }

    #[test]
    fn transform_edge_cases() {
        let v = fit_tfidf(&["alpha beta", "gamma"]).unwrap();
        assert!(v.transform("unknown words only").values.is_empty());
        let one = v.transform("gamma");
        assert_eq!(one.values, vec![1.0]);
        let two = v.transform("alpha gamma gamma");
        assert!((two.norm() - 1.0).abs() < 1e-9);
        assert_eq!(v.transform("Alpha beta"), v.transform("alpha beta alpha beta"));
    }

    #[test]
    fn separable_two_class_corpus() {
        let texts = [
            "what do you think",
            "how do you feel",
            "what would help",
            "how was it",
            "you feel sad",
            "you sound tired",
            "you seem upset",
            "you are worried",
        ];
        let labels: Vec<LabelSet> = (0..8)
            .map(|i| LabelSet::new(None, None, Some(usize::from(i >= 4))))
            .collect();
        let cfg = BaselineConfig {
            epochs: 200,
            ..BaselineConfig::default()
        };
        let (model, _) = train_baseline(&texts, &labels, None, &cfg).unwrap();
        let pred = model.predict(&texts);
        for (p, l) in pred.iter().zip(&labels) {
            assert_eq!(p.skill, l.skill);
        }
    }

    #[test]
    fn zero_weight_heads_stay_at_init() {
        let texts = ["a b", "b c", "c d"];
        let labels = vec![LabelSet::new(Some(0), Some(1), Some(2)); 3];
        let cfg = BaselineConfig {
            epochs: 20,
            lambda: LossWeights::new(1.0, 0.0, 0.0),
            ..BaselineConfig::default()
        };
        let (model, _) = train_baseline(&texts, &labels, None, &cfg).unwrap();
        assert!(model.weight(Task::Cf).data().iter().any(|&w| w != 0.0));
        for t in [Task::Ic, Task::Skill] {
            assert!(model.weight(t).data().iter().all(|&w| w == 0.0));
            assert!(model.bias(t).data().iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn shares_fold_ids_with_gnn_plan() {
        let g = crate::toy::generate_toy_graph(2, 30).unwrap();
        let split = TrainConfig {
            epochs: 5,
            patience: 2,
            ..TrainConfig::default()
        };
        let cfg = BaselineConfig {
            epochs: 5,
            patience: 2,
            ..BaselineConfig::default()
        };
        let cv = cross_validate_baseline(&g, &split, &cfg).unwrap();
        assert_eq!(cv.plan, SplitPlan::new(&g, 0.2, 3, split.seed).unwrap());
        assert_eq!(cv.report.folds.len(), 3);
        assert_eq!(cv.report.model, BASELINE_LABEL);
    }
}
