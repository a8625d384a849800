//! The multi-task model: text features plus a learnable structural embedding
//! feed the message-passing stack, and a single linear head is sliced into
//! one softmax per task.

use crate::autodiff::{Tape, Var};
use crate::embed::{hash_embed, EmbedderKind, EmbedderSpec};
use crate::error::{Error, Result};
use crate::gnn::{GnnStack, LayerKind};
use crate::graph::{Adjacency, HeteroGraph};
use crate::labels::{LabelSet, Task};
use crate::tensor::{argmax, softmax_in_place, ParamId, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

pub const HIDDEN_DIM: usize = 64;
pub const LOGIT_WIDTH: usize = 15;

pub const STRUCT_PARAM: &str = "struct.embedding";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

/// Where a task's logits live in the head output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    pub task: Task,
    pub classes: usize,
    pub offset: usize,
}

impl TaskSpec {
    pub const ALL: [TaskSpec; 3] = [
        TaskSpec {
            task: Task::Cf,
            classes: 4,
            offset: 0,
        },
        TaskSpec {
            task: Task::Ic,
            classes: 3,
            offset: 4,
        },
        TaskSpec {
            task: Task::Skill,
            classes: 8,
            offset: 7,
        },
    ];

    pub fn of(task: Task) -> TaskSpec {
        Self::ALL[task as usize]
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.classes
    }
}

/// Per-task loss weights λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub cf: f64,
    pub ic: f64,
    pub skill: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl LossWeights {
    pub fn uniform() -> Self {
        Self {
            cf: 1.0,
            ic: 1.0,
            skill: 1.0,
        }
    }

    pub fn new(cf: f64, ic: f64, skill: f64) -> Self {
        Self { cf, ic, skill }
    }

    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::Cf => self.cf,
            Task::Ic => self.ic,
            Task::Skill => self.skill,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in Task::ALL {
            let w = self.get(t);
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "loss weight for {t} must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layer: LayerKind,
    pub text_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub lambda: LossWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layer: LayerKind::SageMean,
            text_dim: 768,
            hidden_dim: HIDDEN_DIM,
            dropout: 0.5,
            lambda: LossWeights::uniform(),
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        2 * self.text_dim
    }

    pub fn representation_dim(&self) -> usize {
        self.text_dim + self.hidden_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.text_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("model widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        self.lambda.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskPrediction {
    pub label: usize,
    pub probability: f64,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub cf: TaskPrediction,
    pub ic: TaskPrediction,
    pub skill: TaskPrediction,
}

impl Prediction {
    pub fn get(&self, task: Task) -> &TaskPrediction {
        match task {
            Task::Cf => &self.cf,
            Task::Ic => &self.ic,
            Task::Skill => &self.skill,
        }
    }

    pub fn labels(&self) -> LabelSet {
        LabelSet::new(Some(self.cf.label), Some(self.ic.label), Some(self.skill.label))
    }
}

/// Softmax over each task's slice of a 15-wide logit row.
pub fn predict_logits(logits: &[f64]) -> Prediction {
    assert_eq!(logits.len(), LOGIT_WIDTH, "logit row must be {LOGIT_WIDTH} wide");
    let one = |spec: TaskSpec| {
        let mut p = logits[spec.range()].to_vec();
        softmax_in_place(&mut p);
        let label = argmax(&p);
        TaskPrediction {
            label,
            probability: p[label],
            probabilities: p,
        }
    };
    Prediction {
        cf: one(TaskSpec::of(Task::Cf)),
        ic: one(TaskSpec::of(Task::Ic)),
        skill: one(TaskSpec::of(Task::Skill)),
    }
}

/// `Σ_t λ_t · CE(logits[:, slice_t], labels_t)` where each task averages over
/// the rows that carry its label. Zero-weight tasks are left off the tape.
pub fn multitask_loss(tape: &mut Tape, logits: Var, labels: &[LabelSet], lambda: &LossWeights) -> Var {
    assert_eq!(tape.value(logits).rows(), labels.len(), "one label set per logit row");
    let mut total: Option<Var> = None;
    for spec in TaskSpec::ALL {
        let w = lambda.get(spec.task);
        if w == 0.0 {
            continue;
        }
        let slice = tape.slice_cols(logits, spec.offset, spec.offset + spec.classes);
        let targets = labels.iter().map(|l| l.get(spec.task)).collect();
        let ce = tape.cross_entropy(slice, targets);
        let term = if w == 1.0 { ce } else { tape.scale(ce, w) };
        total = Some(match total {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    total.unwrap_or_else(|| tape.leaf(Tensor::scalar(0.0)))
}

/// Rows of the labels of `ids`, with every other row unlabeled.
pub fn masked_labels(g: &HeteroGraph, ids: &[usize]) -> Vec<LabelSet> {
    let mut out = vec![LabelSet::default(); g.len()];
    for &i in ids {
        out[i] = g.node(i).labels();
    }
    out
}

/// Values produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub representation: Var,
    pub logits: Var,
}

#[derive(Debug, Clone)]
pub struct TaxonomyModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    structural: ParamId,
    structural_ids: Vec<String>,
    structural_index: HashMap<String, usize>,
    stack: GnnStack,
    head_weight: ParamId,
    head_bias: ParamId,
}

impl TaxonomyModel {
    /// One structural row per node of `g`, all zero; Glorot weights, zero biases.
    pub fn new(config: ModelConfig, g: &HeteroGraph, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids: Vec<String> = g.nodes().iter().map(|n| n.id.clone()).collect();
        let structural = store.add(STRUCT_PARAM, Tensor::zeros(&[ids.len(), config.text_dim]));
        let stack = GnnStack::new(
            config.layer,
            config.input_dim(),
            config.hidden_dim,
            config.dropout,
            &mut store,
            &mut rng,
        );
        let head_weight = store.add(
            HEAD_WEIGHT,
            Tensor::glorot(config.representation_dim(), LOGIT_WIDTH, &mut rng),
        );
        let head_bias = store.add(HEAD_BIAS, Tensor::zeros(&[LOGIT_WIDTH]));
        Ok(Self::assemble(
            config,
            store,
            ids,
            structural,
            stack,
            head_weight,
            head_bias,
        ))
    }

    /// Rebuilds a model around parameters restored by name.
    pub fn from_parts(config: ModelConfig, store: ParamStore, structural_ids: Vec<String>) -> Result<Self> {
        config.validate()?;
        let find = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let structural = find(STRUCT_PARAM)?;
        let head_weight = find(HEAD_WEIGHT)?;
        let head_bias = find(HEAD_BIAS)?;
        let expect = |id: ParamId, shape: &[usize]| {
            let got = store.value(id).shape();
            if got == shape {
                Ok(())
            } else {
                Err(Error::Checkpoint(format!(
                    "parameter {} has shape {got:?}, expected {shape:?}",
                    store.get(id).name
                )))
            }
        };
        expect(structural, &[structural_ids.len(), config.text_dim])?;
        expect(head_weight, &[config.representation_dim(), LOGIT_WIDTH])?;
        expect(head_bias, &[LOGIT_WIDTH])?;
        let stack = GnnStack::from_store(
            config.layer,
            config.input_dim(),
            config.hidden_dim,
            config.dropout,
            &store,
        )?;
        Ok(Self::assemble(
            config,
            store,
            structural_ids,
            structural,
            stack,
            head_weight,
            head_bias,
        ))
    }

    fn assemble(
        config: ModelConfig,
        store: ParamStore,
        structural_ids: Vec<String>,
        structural: ParamId,
        stack: GnnStack,
        head_weight: ParamId,
        head_bias: ParamId,
    ) -> Self {
        let structural_index = structural_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Self {
            config,
            store,
            structural,
            structural_ids,
            structural_index,
            stack,
            head_weight,
            head_bias,
        }
    }

    pub fn structural_ids(&self) -> &[String] {
        &self.structural_ids
    }

    pub fn stack(&self) -> &GnnStack {
        &self.stack
    }

    pub fn head_weight(&self) -> ParamId {
        self.head_weight
    }

    pub fn head_bias(&self) -> ParamId {
        self.head_bias
    }

    pub fn structural_param(&self) -> ParamId {
        self.structural
    }

    /// Structural row for each node of `g`; `None` marks a node the model never saw.
    pub fn structural_rows(&self, g: &HeteroGraph) -> Vec<Option<usize>> {
        g.nodes()
            .iter()
            .map(|n| self.structural_index.get(&n.id).copied())
            .collect()
    }

    fn check_text(&self, text: &Tensor, rows: usize) -> Result<()> {
        if text.shape() != [rows, self.config.text_dim] {
            return Err(Error::Shape(format!(
                "expected text features [{rows}, {}], got {:?}",
                self.config.text_dim,
                text.shape()
            )));
        }
        Ok(())
    }

    /// `concat(x_v, s_v)` on the tape, with `s_v = 0` for unseen nodes.
    pub fn assemble_on_tape(&self, tape: &mut Tape, text: Var, rows: Vec<Option<usize>>) -> Var {
        let table = tape.param(&self.store, self.structural);
        let s = tape.gather_rows(table, rows);
        tape.concat_cols(text, s)
    }

    pub fn assemble_inputs(&self, g: &HeteroGraph, text: &Tensor) -> Result<Tensor> {
        self.check_text(text, g.len())?;
        let mut tape = Tape::new();
        let x = tape.leaf(text.clone());
        let v = self.assemble_on_tape(&mut tape, x, self.structural_rows(g));
        Ok(tape.value(v).clone())
    }

    /// Builds the representation and logits on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        text: &Tensor,
        rows: Vec<Option<usize>>,
        adj: &Arc<Adjacency>,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Forward> {
        self.forward_with(&self.store, tape, text, rows, adj, training, rng)
    }

    /// [`forward`](Self::forward) reading parameters from `store`, which must
    /// hold the same layout as the model's own (a clone of it, say).
    #[allow(clippy::too_many_arguments)]
    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        text: &Tensor,
        rows: Vec<Option<usize>>,
        adj: &Arc<Adjacency>,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Forward> {
        self.check_text(text, adj.len())?;
        if rows.len() != adj.len() {
            return Err(Error::Shape(format!(
                "{} structural rows for {} nodes",
                rows.len(),
                adj.len()
            )));
        }
        let x = tape.leaf(text.clone());
        let table = tape.param(store, self.structural);
        let s = tape.gather_rows(table, rows);
        let inputs = tape.concat_cols(x, s);
        let h = self.stack.forward(tape, store, inputs, adj, training, rng)?;
        let representation = tape.concat_cols(x, h);
        let w = tape.param(store, self.head_weight);
        let b = tape.param(store, self.head_bias);
        let z = tape.matmul(representation, w);
        let logits = tape.add_bias(z, b);
        Ok(Forward { representation, logits })
    }

    /// Evaluation-mode forward over `g` with the given adjacency; returns
    /// `(representation [n, 832], logits [n, 15])`.
    pub fn evaluate(&self, g: &HeteroGraph, text: &Tensor, adj: &Arc<Adjacency>) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = self.forward(&mut tape, text, self.structural_rows(g), adj, false, &mut rng)?;
        Ok((tape.value(f.representation).clone(), tape.value(f.logits).clone()))
    }

    pub fn node_representation(&self, g: &HeteroGraph, text: &Tensor) -> Result<Tensor> {
        let adj = Arc::new(g.adjacency().clone());
        Ok(self.evaluate(g, text, &adj)?.0)
    }

    /// Head applied to one representation row.
    pub fn predict(&self, representation: &[f64]) -> Prediction {
        let w = self.store.value(self.head_weight);
        assert_eq!(representation.len(), w.rows(), "representation width mismatch");
        let mut logits = self.store.value(self.head_bias).data().to_vec();
        for (k, &r) in representation.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            for (l, &wk) in logits.iter_mut().zip(w.row(k)) {
                *l += r * wk;
            }
        }
        predict_logits(&logits)
    }

    /// Prediction for a node outside the graph: zero structural half and no
    /// neighbors at any layer.
    pub fn infer_isolated_features(&self, text: &[f64]) -> Result<(Prediction, Vec<f64>)> {
        let x = Tensor::matrix(1, text.len(), text.to_vec());
        let adj = Arc::new(Adjacency::isolated(1));
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = self.forward(&mut tape, &x, vec![None], &adj, false, &mut rng)?;
        let rep = tape.value(f.representation).row(0).to_vec();
        Ok((predict_logits(tape.value(f.logits).row(0)), rep))
    }

    /// Embeds `text` with the hashing embedder and runs isolated inference.
    pub fn infer_isolated(&self, text: &str, embedder: &EmbedderSpec) -> Result<(Prediction, Vec<f64>)> {
        if embedder.kind == EmbedderKind::External {
            return Err(Error::EmbeddingFileRequired);
        }
        if embedder.dim != self.config.text_dim {
            return Err(Error::Shape(format!(
                "embedder dim {} does not match model text dim {}",
                embedder.dim, self.config.text_dim
            )));
        }
        self.infer_isolated_features(&hash_embed(text, embedder))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeKind, NodeKind, NodeRecord};

    fn tiny_graph() -> HeteroGraph {
        let nodes = vec![
            NodeRecord::taxonomy("s0", NodeKind::Skill, "open questions", "ask"),
            NodeRecord::example("e0", "what brings you here", LabelSet::new(Some(0), Some(1), Some(0))),
            NodeRecord::example("e1", "you feel stuck", LabelSet::new(None, None, Some(1))),
            NodeRecord::example("e2", "okay", LabelSet::neutral()),
        ];
        let edges = vec![
            ("e0".to_string(), "s0".to_string(), EdgeKind::Demonstrates),
            ("e1".to_string(), "s0".to_string(), EdgeKind::Demonstrates),
        ];
        HeteroGraph::new(nodes, &edges).unwrap()
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            text_dim: 6,
            hidden_dim: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn slices_are_contiguous_and_cover_the_head() {
        let mut next = 0;
        for spec in TaskSpec::ALL {
            assert_eq!(spec.offset, next);
            assert_eq!(spec.classes, spec.task.class_count());
            next += spec.classes;
        }
        assert_eq!(next, LOGIT_WIDTH);
        assert_eq!(TaskSpec::of(Task::Skill).range(), 7..15);
    }

    #[test]
    fn zero_logits_are_uniform_per_task() {
        let p = predict_logits(&[0.0; 15]);
        assert!(p.cf.probabilities.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert!(p.ic.probabilities.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert!(p.skill.probabilities.iter().all(|&x| (x - 0.125).abs() < 1e-15));
        assert_eq!((p.cf.label, p.ic.label, p.skill.label), (0, 0, 0));
    }

    #[test]
    fn crafted_cf_logit_wins() {
        let mut logits = [0.0; 15];
        logits[0] = 9.0;
        let p = predict_logits(&logits);
        assert_eq!(p.cf.label, 0);
        assert!(p.cf.probability > 0.999);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let mut logits = [0.0; 15];
        logits[9] = 2.0;
        logits[12] = 2.0;
        assert_eq!(predict_logits(&logits).skill.label, 2);
    }

    #[test]
    fn lambda_zeroing_selects_one_task() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::random(&[3, 15], 2.0, 1));
        let labels = vec![
            LabelSet::new(Some(1), Some(0), Some(4)),
            LabelSet::new(Some(3), None, Some(2)),
            LabelSet::default(),
        ];
        let only_cf = multitask_loss(&mut tape, logits, &labels, &LossWeights::new(1.0, 0.0, 0.0));
        let slice = tape.slice_cols(logits, 0, 4);
        let ce = tape.cross_entropy(slice, vec![Some(1), Some(3), None]);
        assert_eq!(tape.value(only_cf).item(), tape.value(ce).item());
    }

    #[test]
    fn no_weight_no_loss() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::random(&[2, 15], 1.0, 1));
        let labels = vec![LabelSet::neutral(); 2];
        let l = multitask_loss(&mut tape, logits, &labels, &LossWeights::new(0.0, 0.0, 0.0));
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn perfect_logits_have_tiny_loss() {
        let labels = vec![
            LabelSet::new(Some(2), Some(1), Some(6)),
            LabelSet::new(None, None, Some(0)),
        ];
        let mut data = vec![-30.0; 30];
        for (r, l) in labels.iter().enumerate() {
            for spec in TaskSpec::ALL {
                if let Some(c) = l.get(spec.task) {
                    data[r * 15 + spec.offset + c] = 30.0;
                }
            }
        }
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::matrix(2, 15, data));
        let l = multitask_loss(&mut tape, logits, &labels, &LossWeights::uniform());
        assert!(tape.value(l).item() < 1e-6);
    }

    #[test]
    fn assembled_rows_are_double_width_with_zero_for_unseen() {
        let g = tiny_graph();
        let cfg = small_config();
        let mut model = TaxonomyModel::new(cfg, &g, 1).unwrap();
        let s = model.structural_param();
        model.store.get_mut(s).value = Tensor::random(&[4, 6], 1.0, 2);
        let text = Tensor::random(&[4, 6], 1.0, 3);
        let x = model.assemble_inputs(&g, &text).unwrap();
        assert_eq!(x.shape(), &[4, 12]);
        assert_eq!(&x.row(1)[..6], text.row(1));
        assert_eq!(&x.row(1)[6..], model.store.value(s).row(1));

        let mut nodes = g.nodes().to_vec();
        nodes.push(NodeRecord::example("new-a", "hello", LabelSet::default()));
        nodes.push(NodeRecord::example("new-b", "hello", LabelSet::default()));
        let g2 = HeteroGraph::new(nodes, &[]).unwrap();
        let mut t2 = Tensor::zeros(&[6, 6]);
        for r in 4..6 {
            t2.row_mut(r).copy_from_slice(text.row(0));
        }
        let x2 = model.assemble_inputs(&g2, &t2).unwrap();
        assert!(x2.row(4)[6..].iter().all(|&v| v == 0.0));
        assert_eq!(x2.row(4), x2.row(5));
    }

    #[test]
    fn representation_starts_with_text() {
        let g = tiny_graph();
        let model = TaxonomyModel::new(small_config(), &g, 4).unwrap();
        let text = Tensor::random(&[4, 6], 1.0, 5);
        let rep = model.node_representation(&g, &text).unwrap();
        assert_eq!(rep.shape(), &[4, 11]);
        for v in 0..4 {
            assert_eq!(&rep.row(v)[..6], text.row(v));
        }
        assert_eq!(rep, model.node_representation(&g, &text).unwrap());
    }

    #[test]
    fn predict_matches_forward_logits() {
        let g = tiny_graph();
        let model = TaxonomyModel::new(small_config(), &g, 6).unwrap();
        let text = Tensor::random(&[4, 6], 1.0, 7);
        let adj = Arc::new(g.adjacency().clone());
        let (rep, logits) = model.evaluate(&g, &text, &adj).unwrap();
        for v in 0..4 {
            let a = model.predict(rep.row(v));
            let b = predict_logits(logits.row(v));
            for t in Task::ALL {
                let d: f64 = a
                    .get(t)
                    .probabilities
                    .iter()
                    .zip(&b.get(t).probabilities)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                assert!(d < 1e-12);
            }
        }
    }

    #[test]
    fn isolated_inference_is_pure_and_deterministic() {
        let g = tiny_graph();
        let cfg = ModelConfig {
            text_dim: 32,
            hidden_dim: 8,
            ..ModelConfig::default()
        };
        let model = TaxonomyModel::new(cfg, &g, 8).unwrap();
        let before = model.store.values();
        let spec = EmbedderSpec::hashing(32);
        let (a, ra) = model.infer_isolated("how does that feel", &spec).unwrap();
        let (b, rb) = model.infer_isolated("how does that feel", &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.len(), 40);
        assert_eq!(model.store.values(), before);
        let external = EmbedderSpec {
            kind: EmbedderKind::External,
            ..spec
        };
        assert!(matches!(
            model.infer_isolated("x", &external),
            Err(Error::EmbeddingFileRequired)
        ));
    }

    #[test]
    fn rejects_bad_config() {
        let g = tiny_graph();
        let bad = ModelConfig {
            lambda: LossWeights::new(-1.0, 1.0, 1.0),
            ..small_config()
        };
        assert!(TaxonomyModel::new(bad, &g, 0).is_err());
    }

    #[test]
    fn default_widths() {
        let c = ModelConfig::default();
        assert_eq!(c.input_dim(), 1536);
        assert_eq!(c.representation_dim(), 832);
    }
}
