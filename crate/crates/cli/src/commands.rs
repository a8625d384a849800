use crate::config::RunConfig;
use crate::UsageError;
use anyhow::{bail, Context};
use serde::Serialize;
use skillgraph::baseline::cross_validate_baseline;
use skillgraph::checkpoint::{load_checkpoint, save_checkpoint};
use skillgraph::embed::{build_features, EmbedderKind, EmbedderSpec, EmbeddingTable};
use skillgraph::export::export_embeddings;
use skillgraph::graph::HeteroGraph;
use skillgraph::labels::Task;
use skillgraph::metrics::MetricsReport;
use skillgraph::model::{Prediction, TaxonomyModel};
use skillgraph::split::SplitPlan;
use skillgraph::tensor::Tensor;
use skillgraph::toy::{generate_toy_dataset, MIN_EXAMPLES};
use skillgraph::train::{cross_validate, evaluate_model, model_label, train, training_adjacency, TrainHistory};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

/// Echo file next to a single-file output: `out.json` gets `out.json.config.json`.
fn sibling_echo(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    out.with_file_name(name)
}

pub fn load_graph(path: &Path) -> anyhow::Result<HeteroGraph> {
    let bytes = read(path)?;
    HeteroGraph::parse(&bytes).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_features(g: &HeteroGraph, spec: &EmbedderSpec, embeddings: Option<&Path>) -> anyhow::Result<Tensor> {
    let bytes = match (spec.kind, embeddings) {
        (EmbedderKind::External, Some(p)) => Some(read(p)?),
        _ => None,
    };
    let table = build_features(g, spec, bytes.as_deref())?;
    Ok(table.features(g)?)
}

/// Violations of a graph file, one display line each. Empty means valid.
pub fn cmd_validate(graph: &Path) -> anyhow::Result<Vec<String>> {
    let g = load_graph(graph)?;
    Ok(g.validate().iter().map(|v| v.to_string()).collect())
}

pub fn cmd_gen(seed: u64, n: usize, out: &Path) -> anyhow::Result<()> {
    if n < MIN_EXAMPLES {
        bail!(UsageError(format!(
            "at least {MIN_EXAMPLES} examples are needed, got {n}"
        )));
    }
    let bytes = generate_toy_dataset(seed, n)?;
    std::fs::write(out, bytes).with_context(|| format!("writing {}", out.display()))?;
    write(
        &sibling_echo(out),
        &to_json(&serde_json::json!({ "command": "gen", "seed": seed, "n": n })),
    )
}

pub fn cmd_embed(graph: &Path, spec: &EmbedderSpec, out: &Path) -> anyhow::Result<()> {
    if spec.kind == EmbedderKind::External {
        bail!(UsageError(
            "embed computes hashing features; external files come from the extractor".into()
        ));
    }
    let g = load_graph(graph)?;
    let table = build_features(&g, spec, None)?;
    write(out, &table.to_text())?;
    write(
        &sibling_echo(out),
        &to_json(&serde_json::json!({ "command": "embed", "graph": graph, "embedder": spec })),
    )
}

fn echo(cfg: &RunConfig, command: &str) -> serde_json::Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    v["command"] = serde_json::Value::from(command);
    v
}

fn write_report(dir: &Path, report: &MetricsReport) -> anyhow::Result<()> {
    write(&dir.join("report.json"), &report.to_json())?;
    write(&dir.join("report.txt"), &report.to_table())
}

/// Trains on the first fold of the training part (its validation ids drive
/// early stopping) and scores the held-out test part.
pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<MetricsReport> {
    let g = load_graph(cfg.graph_path()?)?;
    let dir = cfg.output_dir()?;
    let text = load_features(&g, &cfg.embedder, cfg.embeddings.as_deref())?;
    let t = &cfg.train;
    let plan = SplitPlan::new(&g, t.test_fraction, t.folds, t.seed)?;
    let fold = &plan.folds[0];
    let (model, history) = train(&g, &text, t, &fold.train, &fold.validation)?;
    let adj = training_adjacency(&g, &fold.train, t.held_out_edges);
    let mut m = evaluate_model(&model, &g, &text, &adj, 0, fold.train.len(), &plan.test)?;
    m.best_epoch = Some(history.best_epoch);
    m.stop_epoch = Some(history.stop_epoch);
    let report = MetricsReport::new(
        format!("{} (test split)", model_label(t.layer)),
        echo(cfg, "train"),
        vec![m],
    );

    create_dir(dir)?;
    write(&dir.join("config.json"), &cfg.to_json())?;
    write(&dir.join("checkpoint.json"), &save_checkpoint(&model, &cfg.embedder))?;
    write(&dir.join("history.json"), &to_json(&history))?;
    write_report(dir, &report)?;
    Ok(report)
}

pub fn cmd_cv(cfg: &RunConfig) -> anyhow::Result<MetricsReport> {
    let g = load_graph(cfg.graph_path()?)?;
    let dir = cfg.output_dir()?;
    let text = load_features(&g, &cfg.embedder, cfg.embeddings.as_deref())?;
    let mut cv = cross_validate(&g, &text, &cfg.train)?;
    cv.report.config = echo(cfg, "cv");
    create_dir(dir)?;
    write(&dir.join("config.json"), &cfg.to_json())?;
    write(&dir.join("histories.json"), &to_json(&cv.histories))?;
    write_report(dir, &cv.report)?;
    Ok(cv.report)
}

pub fn cmd_baseline(cfg: &RunConfig) -> anyhow::Result<MetricsReport> {
    let g = load_graph(cfg.graph_path()?)?;
    let dir = cfg.output_dir()?;
    let mut cv = cross_validate_baseline(&g, &cfg.train, &cfg.baseline)?;
    cv.report.config = echo(cfg, "baseline");
    create_dir(dir)?;
    write(&dir.join("config.json"), &cfg.to_json())?;
    write(&dir.join("histories.json"), &to_json(&cv.histories))?;
    write_report(dir, &cv.report)?;
    Ok(cv.report)
}

#[derive(Debug, Serialize)]
struct TaskRecord<'a> {
    label: &'static str,
    probability: f64,
    classes: &'static [&'static str],
    probabilities: &'a [f64],
}

#[derive(Debug, Serialize)]
struct PredictionRecord<'a> {
    line: usize,
    text: &'a str,
    cf: TaskRecord<'a>,
    ic: TaskRecord<'a>,
    skill: TaskRecord<'a>,
    #[serde(skip_serializing_if = "Option::is_none")]
    representation: Option<&'a [f64]>,
}

fn task_record(p: &Prediction, task: Task) -> TaskRecord<'_> {
    let t = p.get(task);
    TaskRecord {
        label: task.class_name(t.label),
        probability: t.probability,
        classes: task.class_names(),
        probabilities: &t.probabilities,
    }
}

/// One JSON record per input line, in input order. Blank lines are skipped
/// but still counted. With external embeddings, line `n` (1-based) is looked
/// up as `line-<n>` in the given embedding file.
pub fn cmd_predict(
    checkpoint: &Path,
    embeddings: Option<&Path>,
    representation: bool,
    input: impl BufRead,
    mut output: impl Write,
) -> anyhow::Result<usize> {
    let (model, spec) = load_checkpoint(&read(checkpoint)?)?;
    let table = match spec.kind {
        EmbedderKind::Hashing => None,
        EmbedderKind::External => {
            let Some(path) = embeddings else {
                bail!(UsageError(format!(
                    "{} (rows keyed line-<n>, pass --embeddings)",
                    skillgraph::Error::EmbeddingFileRequired
                )));
            };
            let table = EmbeddingTable::parse(&read(path)?)?;
            if table.dim() != model.config.text_dim {
                bail!(skillgraph::Error::Shape(format!(
                    "embedding file dim {} differs from model text dim {}",
                    table.dim(),
                    model.config.text_dim
                )));
            }
            Some(table)
        }
    };
    let mut written = 0;
    for (i, line) in input.lines().enumerate() {
        let line = line.context("reading standard input")?;
        let text = line.trim_end_matches('\r');
        if text.trim().is_empty() {
            continue;
        }
        let (pred, rep) = match &table {
            None => model.infer_isolated(text, &spec)?,
            Some(t) => {
                let key = format!("line-{}", i + 1);
                let x = t.get(&key).ok_or(skillgraph::Error::MissingEmbedding(key))?;
                model.infer_isolated_features(x)?
            }
        };
        let record = PredictionRecord {
            line: i + 1,
            text,
            cf: task_record(&pred, Task::Cf),
            ic: task_record(&pred, Task::Ic),
            skill: task_record(&pred, Task::Skill),
            representation: representation.then_some(rep.as_slice()),
        };
        serde_json::to_writer(&mut output, &record)?;
        output.write_all(b"\n")?;
        written += 1;
    }
    output.flush()?;
    Ok(written)
}

/// Writes `embeddings.tsv` and `pca.tsv` into `out`.
pub fn cmd_export(checkpoint: &Path, graph: &Path, embeddings: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let (model, spec): (TaxonomyModel, EmbedderSpec) = load_checkpoint(&read(checkpoint)?)?;
    let g = load_graph(graph)?;
    let text = load_features(&g, &spec, embeddings)?;
    let export = export_embeddings(&model, &g, &text)?;
    create_dir(out)?;
    write(&out.join("embeddings.tsv"), &export.to_text())?;
    write(&out.join("pca.tsv"), &export.pca().to_text())?;
    write(
        &out.join("config.json"),
        &to_json(&serde_json::json!({
            "command": "export",
            "checkpoint": checkpoint,
            "graph": graph,
            "embeddings": embeddings,
            "model": model.config,
            "embedder": spec,
        })),
    )
}

/// Reads a history file written by `train`.
pub fn load_history(path: &Path) -> anyhow::Result<TrainHistory> {
    Ok(serde_json::from_slice(&read(path)?)?)
}
