use anyhow::{bail, Context};
use clap::Args;
use serde::{Deserialize, Serialize};
use skillgraph::baseline::BaselineConfig;
use skillgraph::embed::{EmbedderKind, EmbedderSpec};
use skillgraph::gnn::LayerKind;
use skillgraph::model::LossWeights;
use skillgraph::train::{HeldOutEdges, TrainConfig};
use std::path::{Path, PathBuf};

/// Everything a train, cv or baseline run reads. Written back verbatim as
/// `config.json` in the output directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub graph: Option<PathBuf>,
    /// External embedding file; only read when `embedder.kind` is `external`.
    pub embeddings: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub embedder: EmbedderSpec,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg =
            serde_json::from_slice(&bytes).map_err(|e| crate::UsageError(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn graph_path(&self) -> anyhow::Result<&Path> {
        match &self.graph {
            Some(p) => Ok(p),
            None => bail!(crate::UsageError(
                "no graph file given (use --graph or the `graph` config key)".into()
            )),
        }
    }

    pub fn output_dir(&self) -> anyhow::Result<&Path> {
        match &self.output {
            Some(p) => Ok(p),
            None => bail!(crate::UsageError(
                "no output directory given (use --out or the `output` config key)".into()
            )),
        }
    }
}

/// Flags shared by train, cv and baseline. Each one overrides the matching
/// config key.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// sage, gcn or gat.
    #[arg(long)]
    pub layer: Option<LayerKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Loss weights as `cf,ic,skill`.
    #[arg(long, value_parser = parse_lambda)]
    pub lambda: Option<LossWeights>,
    /// keep or drop.
    #[arg(long, value_parser = parse_held_out)]
    pub held_out_edges: Option<HeldOutEdges>,
    /// hashing or external.
    #[arg(long, value_parser = parse_embedder)]
    pub embedder: Option<EmbedderKind>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Share of training examples cut from the graph each epoch.
    #[arg(long)]
    pub isolate_fraction: Option<f64>,
}

fn parse_lambda(s: &str) -> Result<LossWeights, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [cf, ic, skill] => Ok(LossWeights::new(cf, ic, skill)),
        _ => Err(format!("expected three comma-separated weights, got {}", parts.len())),
    }
}

fn parse_held_out(s: &str) -> Result<HeldOutEdges, String> {
    match s {
        "keep" => Ok(HeldOutEdges::Keep),
        "drop" => Ok(HeldOutEdges::Drop),
        _ => Err(format!("expected keep or drop, got `{s}`")),
    }
}

fn parse_embedder(s: &str) -> Result<EmbedderKind, String> {
    match s {
        "hashing" => Ok(EmbedderKind::Hashing),
        "external" => Ok(EmbedderKind::External),
        _ => Err(format!("expected hashing or external, got `{s}`")),
    }
}

impl RunArgs {
    /// The config file (or defaults) with every given flag applied.
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.graph {
            cfg.graph = Some(v.clone());
        }
        if let Some(v) = &self.embeddings {
            cfg.embeddings = Some(v.clone());
        }
        if let Some(v) = &self.out {
            cfg.output = Some(v.clone());
        }
        let t = &mut cfg.train;
        macro_rules! set {
            ($($flag:ident => $dst:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag { $dst = v; })*
            };
        }
        set! {
            layer => t.layer,
            seed => t.seed,
            epochs => t.epochs,
            patience => t.patience,
            learning_rate => t.learning_rate,
            weight_decay => t.weight_decay,
            dropout => t.dropout,
            folds => t.folds,
            test_fraction => t.test_fraction,
            hidden_dim => t.hidden_dim,
            lambda => t.lambda,
            held_out_edges => t.held_out_edges,
            isolate_fraction => t.isolate_fraction,
            embedder => cfg.embedder.kind,
            embed_dim => cfg.embedder.dim,
        }
        if self.lambda.is_some() {
            cfg.baseline.lambda = cfg.train.lambda;
        }
        cfg.train
            .validate()
            .map_err(|e| crate::UsageError(format!("training config: {e}")))?;
        cfg.baseline
            .validate()
            .map_err(|e| crate::UsageError(format!("baseline config: {e}")))?;
        cfg.embedder
            .validate()
            .map_err(|e| crate::UsageError(format!("embedder config: {e}")))?;
        Ok(cfg)
    }
}
