use skillgraph::embed::{build_features, EmbedderSpec};
use skillgraph::graph::HeteroGraph;
use skillgraph::labels::Task;
use skillgraph::metrics::micro_f1;
use skillgraph::model::masked_labels;
use skillgraph::split::SplitPlan;
use skillgraph::tensor::Tensor;
use skillgraph::toy::{generate_toy_graph, skill_index, template_utterance};
use skillgraph::train::{evaluation_loss, predict_all, train, training_adjacency, TrainConfig};

fn toy(n: usize, dim: usize) -> (HeteroGraph, Tensor) {
    let g = generate_toy_graph(1, n).unwrap();
    let text = build_features(&g, &EmbedderSpec::hashing(dim), None)
        .unwrap()
        .features(&g)
        .unwrap();
    (g, text)
}

#[test]
fn plateaued_run_stops_within_patience_and_restores_the_best_parameters() {
    let (g, text) = toy(60, 64);
    let cfg = TrainConfig {
        epochs: 400,
        learning_rate: 2e-2,
        patience: 10,
        ..TrainConfig::default()
    };
    let plan = SplitPlan::new(&g, cfg.test_fraction, cfg.folds, cfg.seed).unwrap();
    let fold = &plan.folds[0];
    let (model, h) = train(&g, &text, &cfg, &fold.train, &fold.validation).unwrap();

    assert!(h.stop_epoch < cfg.epochs, "never plateaued: {h:?}");
    assert!(h.stop_epoch <= h.best_epoch + cfg.patience + 1);
    assert_eq!(h.validation_loss.len(), h.stop_epoch);
    let min = h.validation_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(h.best_validation_loss, min);
    assert_eq!(h.validation_loss[h.best_epoch - 1], min);

    let adj = training_adjacency(&g, &fold.train, cfg.held_out_edges);
    let restored = evaluation_loss(&model, &g, &text, &adj, &masked_labels(&g, &fold.validation)).unwrap();
    assert_eq!(restored, min);
}

#[test]
fn same_seed_gives_bitwise_identical_histories_and_parameters() {
    let (g, text) = toy(40, 32);
    let cfg = TrainConfig {
        epochs: 30,
        patience: 10,
        isolate_fraction: 0.3,
        ..TrainConfig::default()
    };
    let plan = SplitPlan::new(&g, cfg.test_fraction, cfg.folds, cfg.seed).unwrap();
    let fold = &plan.folds[1];
    let (m1, h1) = train(&g, &text, &cfg, &fold.train, &fold.validation).unwrap();
    let (m2, h2) = train(&g, &text, &cfg, &fold.train, &fold.validation).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(m1.store.values(), m2.store.values());

    let other = TrainConfig { seed: 2, ..cfg };
    let (_, h3) = train(&g, &text, &other, &fold.train, &fold.validation).unwrap();
    assert_ne!(h1.train_loss, h3.train_loss);
}

#[test]
fn training_rejects_overlapping_ids() {
    let (g, text) = toy(20, 16);
    let ex = g.example_indices();
    assert!(train(&g, &text, &TrainConfig::default(), &ex[..10], &ex[9..]).is_err());
}

#[test]
fn sage_fits_the_toy_corpus() {
    let (g, text) = toy(180, 768);
    let cfg = TrainConfig::default();
    let plan = SplitPlan::new(&g, cfg.test_fraction, cfg.folds, cfg.seed).unwrap();
    let fold = &plan.folds[0];
    let (model, _) = train(&g, &text, &cfg, &fold.train, &fold.validation).unwrap();
    let adj = training_adjacency(&g, &fold.train, cfg.held_out_edges);
    let (_, logits) = model.evaluate(&g, &text, &adj).unwrap();
    let predicted = predict_all(&logits);
    for task in Task::ALL {
        let (mut p, mut y) = (Vec::new(), Vec::new());
        for &i in &fold.train {
            if let Some(gold) = g.node(i).labels().get(task) {
                p.push(predicted[i].get(task).unwrap());
                y.push(gold);
            }
        }
        let f1 = micro_f1(&p, &y, &vec![true; y.len()]).unwrap();
        assert!(f1 >= 0.9, "{task} training micro F1 {f1}");
    }
}

#[test]
fn isolated_reflective_listening_template_is_recognised() {
    let (g, text) = toy(180, 768);
    // examples are shown without their edges half the time, so the text
    // path alone has to carry the skill
    let cfg = TrainConfig {
        isolate_fraction: 0.5,
        ..TrainConfig::default()
    };
    let plan = SplitPlan::new(&g, cfg.test_fraction, cfg.folds, cfg.seed).unwrap();
    let fold = &plan.folds[0];
    let (model, _) = train(&g, &text, &cfg, &fold.train, &fold.validation).unwrap();

    let rl = skill_index("skill-reflective-listening").unwrap();
    let spec = EmbedderSpec::hashing(768);
    let labels: Vec<usize> = (0..6)
        .map(|v| {
            model
                .infer_isolated(&template_utterance(rl, v), &spec)
                .unwrap()
                .0
                .skill
                .label
        })
        .collect();
    let want = Task::Skill.class_index("reflective_listening").unwrap();
    assert_eq!(labels[0], want, "{labels:?}");
    assert!(labels.iter().filter(|&&l| l == want).count() >= 4, "{labels:?}");
}
