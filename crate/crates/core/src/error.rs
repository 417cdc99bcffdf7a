use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("noun not attested: {0}")]
    NounNotAttested(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("characters outside the base alphabet: {0:?}")]
    UnknownCharacters(Vec<char>),

    #[error("collision: wordform {0:?} is already a single token")]
    NonceCollision(String),

    #[error("{word:?} is not a single token ({fragments} fragments)")]
    MultiToken { word: String, fragments: usize },

    #[error("sequence of length {len} exceeds context length {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("non-finite loss at step {step} (lr {lr:e})")]
    NonFiniteLoss { step: usize, lr: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::EmptyCorpus => "empty_corpus",
            Error::NounNotAttested(_) => "noun_not_attested",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UnknownCharacters(_) => "unknown_characters",
            Error::NonceCollision(_) => "collision",
            Error::MultiToken { .. } => "multi_token",
            Error::SequenceTooLong { .. } => "sequence_too_long",
            Error::TokenOutOfRange { .. } => "token_out_of_range",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Degenerate(_) => "degenerate",
            Error::Format { .. } => "format",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
