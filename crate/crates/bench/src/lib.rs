//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skillgraph::autodiff::Tape;
use skillgraph::embed::{build_features, EmbedderSpec};
use skillgraph::gnn::LayerKind;
use skillgraph::graph::HeteroGraph;
use skillgraph::labels::LabelSet;
use skillgraph::model::{masked_labels, multitask_loss, TaxonomyModel};
use skillgraph::split::SplitPlan;
use skillgraph::tensor::Tensor;
use skillgraph::toy::generate_toy_graph;
use skillgraph::train::TrainConfig;

pub struct Fixture {
    pub graph: HeteroGraph,
    pub text: Tensor,
    pub labels: Vec<LabelSet>,
}

/// Toy graph with hashing features and the labels of the first fold's training ids.
pub fn fixture(n_examples: usize, dim: usize) -> Fixture {
    let graph = generate_toy_graph(1, n_examples).expect("toy graph");
    let text = build_features(&graph, &EmbedderSpec::hashing(dim), None)
        .and_then(|t| t.features(&graph))
        .expect("features");
    let plan = SplitPlan::new(&graph, 0.2, 3, 1).expect("split");
    let labels = masked_labels(&graph, &plan.folds[0].train);
    Fixture { graph, text, labels }
}

pub fn model(f: &Fixture, layer: LayerKind) -> TaxonomyModel {
    let cfg = TrainConfig {
        layer,
        ..TrainConfig::default()
    };
    TaxonomyModel::new(cfg.model(f.text.cols()), &f.graph, 1).expect("model")
}

/// One training-mode forward and backward pass; returns the loss.
pub fn forward_backward(f: &Fixture, model: &TaxonomyModel, rng: &mut ChaCha8Rng) -> f64 {
    let adj = std::sync::Arc::new(f.graph.adjacency().clone());
    let mut tape = Tape::new();
    let out = model
        .forward(&mut tape, &f.text, model.structural_rows(&f.graph), &adj, true, rng)
        .expect("forward");
    let loss = multitask_loss(&mut tape, out.logits, &f.labels, &model.config.lambda);
    let grads = tape.backward(loss);
    std::hint::black_box(&grads);
    tape.value(loss).item()
}

pub fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}
