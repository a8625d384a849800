//! Command implementations behind the `skillgraph` binary.
//!
//! Exit codes: 0 on success, 1 for domain violations (invalid graph, bad
//! embedding file, diverged training), 2 for I/O and usage errors.

pub mod commands;
pub mod config;

use clap::{Parser, Subcommand};
use config::RunArgs;
use skillgraph::embed::{EmbedderKind, EmbedderSpec};
use std::io::Write;
use std::path::PathBuf;

pub use commands::{cmd_baseline, cmd_cv, cmd_embed, cmd_export, cmd_gen, cmd_predict, cmd_train, cmd_validate};
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// A problem with how the command was invoked rather than with the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<skillgraph::Error>() {
            return match e {
                skillgraph::Error::Io(_) | skillgraph::Error::InvalidArgument(_) => EXIT_USAGE,
                _ => EXIT_DOMAIN,
            };
        }
    }
    EXIT_DOMAIN
}

#[derive(Debug, Parser)]
#[command(
    name = "skillgraph",
    version,
    about = "Multi-task GNNs over a counseling-skill taxonomy graph"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and schema-check a graph file; prints one line per violation.
    Validate { graph: PathBuf },
    /// Write the synthetic toy dataset.
    Gen {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 180)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write hashing-embedder features for every node of a graph.
    Embed {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 768)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        ngram_max: usize,
        #[arg(long, default_value_t = 0)]
        embed_seed: u64,
    },
    /// Train one model and score it on the held-out test split.
    Train(RunArgs),
    /// k-fold cross-validation of the GNN.
    Cv(RunArgs),
    /// k-fold cross-validation of the TF-IDF linear baseline.
    Baseline(RunArgs),
    /// Classify utterances read from standard input, one per line.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Embedding file with rows `line-<n>`, for checkpoints trained on external embeddings.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Include the representation vector in each record.
        #[arg(long)]
        representation: bool,
    },
    /// Write learned representations of every example node, plus a 2-D PCA.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runs one command, printing results to `stdout` and errors to `stderr`,
/// and returns the process exit code.
pub fn run(cli: Cli, stdin: impl std::io::BufRead, mut stdout: impl Write, mut stderr: impl Write) -> i32 {
    let result: anyhow::Result<i32> = (|| match cli.command {
        Command::Validate { graph } => {
            let violations = cmd_validate(&graph)?;
            for v in &violations {
                writeln!(stdout, "{v}")?;
            }
            Ok(if violations.is_empty() { EXIT_OK } else { EXIT_DOMAIN })
        }
        Command::Gen { seed, n, out } => {
            cmd_gen(seed, n, &out)?;
            Ok(EXIT_OK)
        }
        Command::Embed {
            graph,
            out,
            dim,
            ngram_max,
            embed_seed,
        } => {
            let spec = EmbedderSpec {
                kind: EmbedderKind::Hashing,
                dim,
                ngram_max,
                seed: embed_seed,
            };
            spec.validate().map_err(|e| UsageError(e.to_string()))?;
            cmd_embed(&graph, &spec, &out)?;
            Ok(EXIT_OK)
        }
        Command::Train(args) => {
            let report = cmd_train(&args.resolve()?)?;
            write!(stdout, "{}", report.to_table())?;
            Ok(EXIT_OK)
        }
        Command::Cv(args) => {
            let report = cmd_cv(&args.resolve()?)?;
            write!(stdout, "{}", report.to_table())?;
            Ok(EXIT_OK)
        }
        Command::Baseline(args) => {
            let report = cmd_baseline(&args.resolve()?)?;
            write!(stdout, "{}", report.to_table())?;
            Ok(EXIT_OK)
        }
        Command::Predict {
            checkpoint,
            embeddings,
            representation,
        } => {
            cmd_predict(&checkpoint, embeddings.as_deref(), representation, stdin, &mut stdout)?;
            Ok(EXIT_OK)
        }
        Command::Export {
            checkpoint,
            graph,
            embeddings,
            out,
        } => {
            cmd_export(&checkpoint, &graph, embeddings.as_deref(), &out)?;
            Ok(EXIT_OK)
        }
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            exit_code(&e)
        }
    }
}
