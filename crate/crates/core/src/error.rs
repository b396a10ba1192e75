use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid UTF-8 in {path} at line {line}")]
    Decode { path: PathBuf, line: usize },

    #[error("alignment error: source has {source_len} lines, target has {target_len}")]
    Alignment { source_len: usize, target_len: usize },

    #[error("corpus too small: {available} unique pairs, {requested} requested for valid+test")]
    CorpusSize { available: usize, requested: usize },

    #[error("teacher command failed ({status}): {stderr}")]
    Subprocess { status: String, stderr: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dangling continuation marker on final token {0:?}")]
    DanglingContinuation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    Vocabulary { id: u32, vocab_size: usize },

    #[error("sequence length {len} exceeds max_positions {max}")]
    Position { len: usize, max: usize },

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f32 },

    #[error("empty batch at step {step}: no target tokens outside padding")]
    EmptyBatch { step: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("empty output on the {0} side of a splice join")]
    EmptyOutput(&'static str),

    #[error("splice plan has {spans} spans but {outputs} outputs were given")]
    Plan { spans: usize, outputs: usize },

    #[error("translation of span {start}..{end} failed: {message}")]
    Translate {
        start: usize,
        end: usize,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
