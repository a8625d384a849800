use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed graph file: {0}")]
    Syntax(String),

    #[error("duplicate node id `{0}`")]
    DuplicateId(String),

    #[error("unknown node kind `{0}`")]
    UnknownNodeKind(String),

    #[error("unknown edge kind `{0}`")]
    UnknownEdgeKind(String),

    #[error("unknown {task} label `{label}`")]
    UnknownLabel { task: &'static str, label: String },

    #[error("edge {source_id} -> {target} references unknown node `{missing}`")]
    DanglingEdge {
        source_id: String,
        target: String,
        missing: String,
    },

    #[error("self-loop on node `{0}`")]
    SelfLoop(String),

    #[error("graph has no example nodes")]
    NoExamples,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("embedding file line {line}: {message}")]
    EmbeddingFormat { line: usize, message: String },

    #[error("embedding file has no row for node `{0}`")]
    MissingEmbedding(String),

    #[error("embedding file has a row for `{0}`, which is not a node of the graph")]
    UnexpectedEmbedding(String),

    #[error("embedding file required for external embeddings")]
    EmbeddingFileRequired,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
