use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("input contains no interactions")]
    EmptyInput,

    #[error("no user has at least {min_ratings} interactions")]
    NoSurvivingUsers { min_ratings: usize },

    #[error("user {user:?} has {count} interactions; at least 3 are needed to hold out validation and test items")]
    TooFewInteractions { user: String, count: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("item {item} is not a ranking candidate for user {user}")]
    NotCandidate { user: u32, item: u32 },

    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    Diverged {
        what: String,
        epoch: usize,
        batch: usize,
    },

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
