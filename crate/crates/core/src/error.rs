use std::path::PathBuf;

use thiserror::Error;

use crate::query::StructureName;

/// Errors across graph loading, query handling, sampling, training, and
/// evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// A data file could not be parsed. Carries file and line so the offending
    /// row can be found directly.
    #[error("{file}:{line}: {msg}")]
    Parse { file: PathBuf, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    /// An entity or relation id fell outside the graph's vocabulary.
    #[error("unknown {kind} id {id} (vocabulary size {size})")]
    UnknownId { kind: &'static str, id: u32, size: usize },

    /// A query tree failed a structural precondition of the requested
    /// operation (e.g. union under negation during normalization).
    #[error("unsupported query structure: {0}")]
    UnsupportedStructure(String),

    /// Anchor/relation lists do not fit the template being instantiated.
    #[error("template {template} expects {expected_anchors} anchors and {expected_relations} relations, got {got_anchors} and {got_relations}")]
    Arity {
        template: StructureName,
        expected_anchors: usize,
        expected_relations: usize,
        got_anchors: usize,
        got_relations: usize,
    },

    /// Negative sampling could not find enough non-answers.
    #[error("cannot draw {requested} negatives for a {structure} instance: only {available} non-answer entities exist")]
    NotEnoughNegatives { structure: StructureName, requested: usize, available: usize },

    /// Training aborted on a non-finite loss.
    #[error("non-finite loss at step {step} on a {structure} batch")]
    NonFiniteLoss { step: u64, structure: StructureName },

    /// A checkpoint disagrees with the data it is being used with.
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    /// Malformed key=value configuration.
    #[error("config error: {0}")]
    Config(String),

    /// An operation was called outside its contract.
    #[error("invalid call: {0}")]
    Misuse(String),

    #[error(transparent)]
    Nn(#[from] pathformer_nn::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(file: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { file: file.into(), line, msg: msg.into() }
    }
}
