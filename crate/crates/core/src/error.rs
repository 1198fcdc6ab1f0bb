use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },

    #[error("SVD of a {rows}x{cols} matrix did not converge after {sweeps} sweeps")]
    Decomposition {
        rows: usize,
        cols: usize,
        sweeps: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: parse error at byte offset {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid checkpoint: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("stale activation cache: {0}")]
    StaleCache(String),

    #[error("degenerate latent: {which} has norm {norm:e}")]
    DegenerateLatent { which: &'static str, norm: f64 },

    #[error("degenerate latents at example indices {indices:?}")]
    DegenerateBatch { indices: Vec<usize> },

    #[error("AUROC undefined: {novel} novel and {normal} normal examples")]
    UndefinedAuroc { novel: usize, normal: usize },

    #[error("non-finite loss {term} = {value} at epoch {epoch}, iteration {iteration}")]
    NonFinite {
        epoch: usize,
        iteration: usize,
        term: &'static str,
        value: f64,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Layer { .. } => 2,
            Error::Io { .. } | Error::Parse { .. } | Error::Checkpoint { .. } => 3,
            Error::EmptyDataset(_) => 2,
            _ => 4,
        }
    }
}
