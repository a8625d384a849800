//! Multi-task graph neural networks over a counseling-skill taxonomy.
//!
//! The crate covers the heterogeneous graph and its schema, text features,
//! a small reverse-mode autodiff engine, SAGE/GCN/GAT layers, the multi-task
//! model, training and cross-validation, metrics, and a TF-IDF baseline.

pub mod autodiff;
pub mod baseline;
pub mod checkpoint;
pub mod embed;
pub mod error;
pub mod export;
pub mod gnn;
pub mod gradcheck;
pub mod graph;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod split;
pub mod tensor;
pub mod toy;
pub mod train;

pub use baseline::{
    cross_validate_baseline, fit_tfidf, train_baseline, BaselineConfig, LinearBaseline, TfidfVocabulary,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use embed::{build_features, load_embeddings, EmbedderKind, EmbedderSpec, EmbeddingTable};
pub use error::{Error, Result};
pub use export::{export_embeddings, EmbeddingExport};
pub use gnn::{GnnStack, LayerKind};
pub use graph::{parse_graph, validate_schema, Adjacency, EdgeKind, HeteroGraph, NodeKind, NodeRecord, Violation};
pub use labels::{LabelSet, Task};
pub use metrics::{macro_f1, micro_f1, precision_at_k, recall_at_k, MetricsReport};
pub use model::{multitask_loss, LossWeights, ModelConfig, Prediction, TaskSpec, TaxonomyModel};
pub use optim::AdamConfig;
pub use split::{kfold, split_dataset, Fold, SplitPlan};
pub use tensor::{ParamId, ParamStore, Tensor};
pub use toy::{generate_toy_dataset, generate_toy_graph};
pub use train::{cross_validate, train, CrossValidation, HeldOutEdges, TrainConfig, TrainHistory};
