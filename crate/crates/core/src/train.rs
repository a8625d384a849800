//! Full-batch training with early stopping, and k-fold cross-validation.

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::gnn::LayerKind;
use crate::graph::{Adjacency, HeteroGraph};
use crate::labels::LabelSet;
use crate::metrics::{evaluate_fold, FoldMetrics, MetricsReport};
use crate::model::{masked_labels, multitask_loss, predict_logits, LossWeights, ModelConfig, TaxonomyModel};
use crate::optim::{adam_step, AdamConfig};
use crate::split::SplitPlan;
use crate::tensor::Tensor;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// What happens to edges of examples outside the training ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeldOutEdges {
    /// Held-out examples stay wired into the graph; only their labels are hidden.
    #[default]
    Keep,
    /// Held-out examples are cut off, as at isolated inference.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub dropout: f64,
    pub folds: usize,
    pub test_fraction: f64,
    pub lambda: LossWeights,
    pub layer: LayerKind,
    pub hidden_dim: usize,
    pub seed: u64,
    pub held_out_edges: HeldOutEdges,
    /// Chance that a training example is presented isolated (no edges, zero
    /// structural row) in a given epoch.
    pub isolate_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            patience: 50,
            dropout: 0.5,
            folds: 3,
            test_fraction: 0.2,
            lambda: LossWeights::uniform(),
            layer: LayerKind::SageMean,
            hidden_dim: 64,
            seed: 1,
            held_out_edges: HeldOutEdges::Keep,
            isolate_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if self.patience == 0 || self.patience >= self.epochs {
            return Err(Error::InvalidArgument(format!(
                "patience must lie in [1, epochs), got {} with {} epochs",
                self.patience, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.isolate_fraction) {
            return Err(Error::InvalidArgument(format!(
                "isolate_fraction must lie in [0, 1), got {}",
                self.isolate_fraction
            )));
        }
        if self.folds < 2 {
            return Err(Error::InvalidArgument("at least two folds are needed".into()));
        }
        self.adam().validate()?;
        self.model(768).validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn model(&self, text_dim: usize) -> ModelConfig {
        ModelConfig {
            layer: self.layer,
            text_dim,
            hidden_dim: self.hidden_dim,
            dropout: self.dropout,
            lambda: self.lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// 1-based epoch of the lowest validation loss.
    pub best_epoch: usize,
    pub stop_epoch: usize,
    pub best_validation_loss: f64,
}

/// Tracks the lowest loss; "improved" means strictly lower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Verdict {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            Verdict::Improved
        } else if epoch - self.best_epoch >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }
}

/// Graph used for message passing while training on `train_ids`.
pub fn training_adjacency(g: &HeteroGraph, train_ids: &[usize], policy: HeldOutEdges) -> Arc<Adjacency> {
    match policy {
        HeldOutEdges::Keep => Arc::new(g.adjacency().clone()),
        HeldOutEdges::Drop => {
            let mut cut = vec![false; g.len()];
            for i in g.example_indices() {
                cut[i] = true;
            }
            for &i in train_ids {
                cut[i] = false;
            }
            Arc::new(g.adjacency().without_nodes(&cut))
        }
    }
}

/// Evaluation-mode multi-task loss over the labels of `ids`.
pub fn evaluation_loss(
    model: &TaxonomyModel,
    g: &HeteroGraph,
    text: &Tensor,
    adj: &Arc<Adjacency>,
    labels: &[LabelSet],
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let f = model.forward(&mut tape, text, model.structural_rows(g), adj, false, &mut rng)?;
    let loss = multitask_loss(&mut tape, f.logits, labels, &model.config.lambda);
    Ok(tape.value(loss).item())
}

fn check_ids(g: &HeteroGraph, train_ids: &[usize], val_ids: &[usize]) -> Result<()> {
    if train_ids.is_empty() || val_ids.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation ids must be non-empty".into(),
        ));
    }
    let mut seen = vec![0u8; g.len()];
    for &i in train_ids {
        if i >= g.len() {
            return Err(Error::InvalidArgument(format!("node index {i} out of range")));
        }
        seen[i] |= 1;
    }
    for &i in val_ids {
        if i >= g.len() {
            return Err(Error::InvalidArgument(format!("node index {i} out of range")));
        }
        seen[i] |= 2;
    }
    if seen.contains(&3) {
        return Err(Error::InvalidArgument("training and validation ids overlap".into()));
    }
    Ok(())
}

/// Trains a fresh model seeded with `cfg.seed` and returns the parameters
/// from the epoch with the lowest validation loss.
pub fn train(
    g: &HeteroGraph,
    text: &Tensor,
    cfg: &TrainConfig,
    train_ids: &[usize],
    val_ids: &[usize],
) -> Result<(TaxonomyModel, TrainHistory)> {
    cfg.validate()?;
    check_ids(g, train_ids, val_ids)?;
    let mut model = TaxonomyModel::new(cfg.model(text.cols()), g, cfg.seed)?;
    let adam = cfg.adam();
    let adj = training_adjacency(g, train_ids, cfg.held_out_edges);
    let rows = model.structural_rows(g);
    let train_labels = masked_labels(g, train_ids);
    let val_labels = masked_labels(g, val_ids);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd1b5_4a32_d192_ed03);
    let mut isolate_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x94d0_49bb_1331_11eb);

    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.store.values();
    let mut train_loss = Vec::new();
    let mut validation_loss = Vec::new();
    let mut stop_epoch = cfg.epochs;

    for epoch in 1..=cfg.epochs {
        let mut epoch_rows = rows.clone();
        let epoch_adj = if cfg.isolate_fraction > 0.0 {
            let mut cut = vec![false; g.len()];
            for &i in train_ids {
                if isolate_rng.random_bool(cfg.isolate_fraction) {
                    cut[i] = true;
                    epoch_rows[i] = None;
                }
            }
            Arc::new(adj.without_nodes(&cut))
        } else {
            Arc::clone(&adj)
        };
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, text, epoch_rows, &epoch_adj, true, &mut rng)?;
        let loss = multitask_loss(&mut tape, f.logits, &train_labels, &model.config.lambda);
        let lv = tape.value(loss).item();
        if !lv.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        tape.backward(loss).accumulate_into(&mut model.store);
        drop(tape);
        adam_step(&mut model.store, &adam);

        let vl = evaluation_loss(&model, g, text, &adj, &val_labels)?;
        if !vl.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        train_loss.push(lv);
        validation_loss.push(vl);
        match stopper.observe(epoch, vl) {
            Verdict::Improved => best_params = model.store.values(),
            Verdict::Continue => {}
            Verdict::Stop => {
                stop_epoch = epoch;
                break;
            }
        }
    }
    model.store.restore(best_params);
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

/// Argmax labels for every node from an evaluation pass.
pub fn predict_all(logits: &Tensor) -> Vec<LabelSet> {
    (0..logits.rows())
        .map(|i| predict_logits(logits.row(i)).labels())
        .collect()
}

/// Scores a trained model on `queries` with the same message-passing graph
/// it was trained on.
pub fn evaluate_model(
    model: &TaxonomyModel,
    g: &HeteroGraph,
    text: &Tensor,
    adj: &Arc<Adjacency>,
    fold: usize,
    train_size: usize,
    queries: &[usize],
) -> Result<FoldMetrics> {
    let (reps, logits) = model.evaluate(g, text, adj)?;
    evaluate_fold(g, fold, train_size, queries, &predict_all(&logits), &reps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub plan: SplitPlan,
    pub histories: Vec<TrainHistory>,
    pub report: MetricsReport,
}

pub fn model_label(layer: LayerKind) -> String {
    format!("gnn-{layer}")
}

/// Trains one model per fold of the training part (fold `i` seeded with
/// `seed ^ i`) and scores each on its validation ids.
pub fn cross_validate(g: &HeteroGraph, text: &Tensor, cfg: &TrainConfig) -> Result<CrossValidation> {
    cfg.validate()?;
    let plan = SplitPlan::new(g, cfg.test_fraction, cfg.folds, cfg.seed)?;
    let run_fold = |i: usize| -> Result<(FoldMetrics, TrainHistory)> {
        let fold = &plan.folds[i];
        let fold_cfg = TrainConfig {
            seed: cfg.seed ^ i as u64,
            ..*cfg
        };
        let (model, history) = train(g, text, &fold_cfg, &fold.train, &fold.validation)?;
        let adj = training_adjacency(g, &fold.train, cfg.held_out_edges);
        let mut m = evaluate_model(&model, g, text, &adj, i, fold.train.len(), &fold.validation)?;
        m.best_epoch = Some(history.best_epoch);
        m.stop_epoch = Some(history.stop_epoch);
        Ok((m, history))
    };
    // folds share nothing mutable, so running them on separate threads
    // yields the same results as running them in order
    let outcomes: Vec<Result<(FoldMetrics, TrainHistory)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..plan.folds.len()).map(|i| s.spawn(move || run_fold(i))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("fold thread panicked"))
            .collect()
    });
    let mut histories = Vec::new();
    let mut folds = Vec::new();
    for outcome in outcomes {
        let (m, h) = outcome?;
        folds.push(m);
        histories.push(h);
    }
    let echo = serde_json::to_value(cfg).expect("config serializes");
    let report = MetricsReport::new(model_label(cfg.layer), echo, folds);
    Ok(CrossValidation {
        plan,
        histories,
        report,
    })
}
