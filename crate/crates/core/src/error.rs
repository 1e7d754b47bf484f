use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate document id {0:?}")]
    DuplicateDocument(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("query {0:?} has no terms")]
    EmptyQuery(String),

    #[error("ranked list is empty")]
    EmptyRanking,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("design has {rows} rows but the fit needs more than {needed}")]
    TooFewRows { rows: usize, needed: usize },

    #[error("collinear columns: {}", .0.join(", "))]
    Collinear(Vec<String>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("missing feature {0:?}")]
    MissingFeature(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("query {query}, column {column}: {source}")]
    Cell {
        query: String,
        column: String,
        #[source]
        source: Box<Error>,
    },

    #[error("no relevant documents for query {0:?}")]
    NoRelevant(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
