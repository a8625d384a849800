use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skillgraph::autodiff::Tape;
use skillgraph::embed::EmbedderSpec;
use skillgraph::gnn::LayerKind;
use skillgraph::gradcheck::grad_check;
use skillgraph::graph::{EdgeKind, HeteroGraph, NodeKind, NodeRecord};
use skillgraph::labels::{LabelSet, Task};
use skillgraph::model::{
    masked_labels, multitask_loss, predict_logits, LossWeights, ModelConfig, TaskSpec, TaxonomyModel, LOGIT_WIDTH,
    STRUCT_PARAM,
};
use skillgraph::tensor::Tensor;
use std::sync::Arc;

fn six_node_graph() -> HeteroGraph {
    let nodes = vec![
        NodeRecord::taxonomy("bond", NodeKind::CommonFactor, "Bond", "trust"),
        NodeRecord::taxonomy("ear", NodeKind::InterventionConcept, "EAR", "empathy"),
        NodeRecord::taxonomy("rl", NodeKind::Skill, "Reflective listening", "mirror"),
        NodeRecord::example("ex-1", "so you feel stuck", LabelSet::new(Some(0), Some(0), Some(1))),
        NodeRecord::example(
            "ex-2",
            "you are saying work is hard",
            LabelSet::new(None, None, Some(1)),
        ),
        NodeRecord::example("ex-3", "see you next week", LabelSet::neutral()),
    ];
    let e = |a: &str, b: &str, k| (a.to_string(), b.to_string(), k);
    let edges = [
        e("ex-1", "bond", EdgeKind::Fosters),
        e("ex-1", "ear", EdgeKind::Expresses),
        e("ex-1", "rl", EdgeKind::Demonstrates),
        e("ex-2", "rl", EdgeKind::Demonstrates),
        e("rl", "ear", EdgeKind::Conveys),
        e("bond", "ear", EdgeKind::Includes),
    ];
    HeteroGraph::new(nodes, &edges).unwrap()
}

/// Mean cross-entropy of the labeled rows of one task, computed directly.
fn task_ce(logits: &Tensor, labels: &[LabelSet], task: Task) -> f64 {
    let spec = TaskSpec::of(task);
    let mut total = 0.0;
    let mut n = 0;
    for (i, l) in labels.iter().enumerate() {
        let Some(y) = l.get(task) else { continue };
        let row = &logits.row(i)[spec.range()];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

fn loss_value(logits: &Tensor, labels: &[LabelSet], lambda: &LossWeights) -> f64 {
    let mut tape = Tape::new();
    let z = tape.leaf(logits.clone());
    let l = multitask_loss(&mut tape, z, labels, lambda);
    tape.value(l).item()
}

fn label_set() -> impl Strategy<Value = LabelSet> {
    (
        proptest::option::of(0..4usize),
        proptest::option::of(0..3usize),
        proptest::option::of(0..8usize),
    )
        .prop_map(|(cf, ic, skill)| LabelSet::new(cf, ic, skill))
}

#[test]
fn head_slices_are_contiguous_disjoint_and_cover_the_logits() {
    let mut next = 0;
    for spec in TaskSpec::ALL {
        assert_eq!(spec.offset, next);
        assert_eq!(spec.classes, spec.task.class_count());
        next += spec.classes;
    }
    assert_eq!(next, LOGIT_WIDTH);
    assert_eq!(LOGIT_WIDTH, 4 + 3 + 8);
}

#[test]
fn masked_loss_on_a_mixed_batch_equals_per_task_subset_losses() {
    let labels = vec![
        LabelSet::new(Some(0), Some(1), Some(3)),
        LabelSet::new(Some(2), Some(0), Some(6)),
        LabelSet::new(None, None, Some(1)),
        LabelSet::new(None, None, Some(4)),
        LabelSet::neutral(),
        LabelSet::default(),
    ];
    let logits = Tensor::random(&[6, LOGIT_WIDTH], 3.0, 11);
    let lambda = LossWeights::new(0.7, 1.3, 2.0);
    let want: f64 = Task::ALL
        .into_iter()
        .map(|t| lambda.get(t) * task_ce(&logits, &labels, t))
        .sum();
    assert!((loss_value(&logits, &labels, &lambda) - want).abs() < 1e-12);
}

#[test]
fn skill_only_row_adds_nothing_to_cf_and_ic() {
    let full = vec![
        LabelSet::new(Some(1), Some(0), Some(2)),
        LabelSet::new(None, None, Some(5)),
    ];
    let logits = Tensor::random(&[2, LOGIT_WIDTH], 2.0, 4);
    let cf_ic = LossWeights::new(1.0, 1.0, 0.0);
    let first_only = vec![full[0], LabelSet::default()];
    assert_eq!(
        loss_value(&logits, &full, &cf_ic),
        loss_value(&logits, &first_only, &cf_ic)
    );
}

#[test]
fn cf_only_weights_give_cf_cross_entropy() {
    let labels = vec![
        LabelSet::new(Some(3), Some(1), Some(7)),
        LabelSet::new(Some(0), None, None),
    ];
    let logits = Tensor::random(&[2, LOGIT_WIDTH], 2.0, 5);
    let got = loss_value(&logits, &labels, &LossWeights::new(1.0, 0.0, 0.0));
    assert!((got - task_ce(&logits, &labels, Task::Cf)).abs() < 1e-12);
}

#[test]
fn saturated_logits_give_near_zero_loss() {
    let labels = vec![LabelSet::new(Some(1), Some(2), Some(0))];
    let mut row = vec![0.0; LOGIT_WIDTH];
    row[1] = 50.0;
    row[4 + 2] = 50.0;
    row[7] = 50.0;
    assert!(loss_value(&Tensor::matrix(1, LOGIT_WIDTH, row), &labels, &LossWeights::uniform()) < 1e-6);
}

#[test]
fn argmax_ties_resolve_to_lowest_index() {
    let p = predict_logits(&[0.0; LOGIT_WIDTH]);
    assert_eq!((p.cf.label, p.ic.label, p.skill.label), (0, 0, 0));
    let mut row = vec![0.0; LOGIT_WIDTH];
    row[8] = 2.0;
    row[11] = 2.0;
    assert_eq!(predict_logits(&row).skill.label, 1);
}

proptest! {
    #[test]
    fn masked_loss_equals_weighted_subset_sum(
        labels in proptest::collection::vec(label_set(), 1..12),
        seed in any::<u64>(),
        w in (0.0..3.0f64, 0.0..3.0f64, 0.0..3.0f64),
    ) {
        let logits = Tensor::random(&[labels.len(), LOGIT_WIDTH], 4.0, seed);
        let lambda = LossWeights::new(w.0, w.1, w.2);
        let want: f64 = Task::ALL.into_iter().map(|t| lambda.get(t) * task_ce(&logits, &labels, t)).sum();
        let got = loss_value(&logits, &labels, &lambda);
        prop_assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
    }

    #[test]
    fn probabilities_sum_to_one_per_slice(logits in proptest::collection::vec(-30.0..30.0f64, LOGIT_WIDTH)) {
        let p = predict_logits(&logits);
        for t in Task::ALL {
            let s: f64 = p.get(t).probabilities.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert_eq!(p.get(t).probabilities.len(), t.class_count());
        }
    }

    #[test]
    fn perturbing_one_slice_leaves_other_tasks_unchanged(
        logits in proptest::collection::vec(-10.0..10.0f64, LOGIT_WIDTH),
        slot in 0..LOGIT_WIDTH,
        delta in -5.0..5.0f64,
    ) {
        let before = predict_logits(&logits);
        let mut moved = logits.clone();
        moved[slot] += delta;
        let after = predict_logits(&moved);
        for spec in TaskSpec::ALL {
            if !spec.range().contains(&slot) {
                prop_assert_eq!(&before.get(spec.task).probabilities, &after.get(spec.task).probabilities);
            }
        }
    }

    #[test]
    fn softmax_is_shift_invariant_per_slice(
        logits in proptest::collection::vec(-10.0..10.0f64, LOGIT_WIDTH),
        task in 0..3usize,
        c in -100.0..100.0f64,
    ) {
        let spec = TaskSpec::ALL[task];
        let mut shifted = logits.clone();
        shifted[spec.range()].iter_mut().for_each(|z| *z += c);
        let (a, b) = (predict_logits(&logits), predict_logits(&shifted));
        for (x, y) in a.get(spec.task).probabilities.iter().zip(&b.get(spec.task).probabilities) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let g = six_node_graph();
    for layer in LayerKind::ALL {
        let config = ModelConfig {
            layer,
            text_dim: 5,
            hidden_dim: 4,
            dropout: 0.5,
            lambda: LossWeights::new(1.0, 0.5, 2.0),
        };
        let model = TaxonomyModel::new(config, &g, 3).unwrap();
        let mut store = model.store.clone();
        let id = store.find(STRUCT_PARAM).unwrap();
        store.get_mut(id).value = Tensor::random(&[6, 5], 0.5, 21);
        let text = Tensor::random(&[6, 5], 1.0, 22);
        let adj = Arc::new(g.adjacency().clone());
        let labels = masked_labels(&g, &g.example_indices());
        let rows = model.structural_rows(&g);
        let check = grad_check(&mut store, 1e-4, 0, |s, tape| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let f = model
                .forward_with(s, tape, &text, rows.clone(), &adj, false, &mut rng)
                .unwrap();
            multitask_loss(tape, f.logits, &labels, &model.config.lambda)
        });
        assert!(check.max_abs_gradient > 0.0);
        assert!(check.max_relative_error < 1e-3, "{layer}: {check:?}");
    }
}

#[test]
fn training_rows_are_twice_text_width_and_unseen_rows_have_zero_structure() {
    let g = six_node_graph();
    let config = ModelConfig {
        text_dim: 768,
        ..ModelConfig::default()
    };
    let mut model = TaxonomyModel::new(config, &g, 1).unwrap();
    let id = model.store.find(STRUCT_PARAM).unwrap();
    model.store.get_mut(id).value.fill(0.25);
    let text = Tensor::random(&[6, 768], 1.0, 2);
    let inputs = model.assemble_inputs(&g, &text).unwrap();
    assert_eq!(inputs.cols(), 1536);
    assert!(inputs.row(0)[768..].iter().all(|&v| v == 0.25));

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(2, 768, [text.row(0), text.row(0)].concat()));
    let unseen = model.assemble_on_tape(&mut tape, x, vec![None, None]);
    let v = tape.value(unseen);
    assert!(v.row(0)[768..].iter().all(|&e| e == 0.0));
    assert_eq!(v.row(0), v.row(1));
}

#[test]
fn isolated_inference_is_pure_and_repeatable() {
    let g = six_node_graph();
    let config = ModelConfig {
        text_dim: 32,
        ..ModelConfig::default()
    };
    let model = TaxonomyModel::new(config, &g, 9).unwrap();
    let before = model.store.values();
    let spec = EmbedderSpec::hashing(32);
    let (a, ra) = model.infer_isolated("it sounds like you feel unheard", &spec).unwrap();
    let (b, rb) = model.infer_isolated("it sounds like you feel unheard", &spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert_eq!(ra.len(), 32 + 64);
    assert_eq!(model.store.values(), before);
}
