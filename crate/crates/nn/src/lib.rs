//! Neural side of the toolkit: a small autodiff kernel, the BiLSTM and
//! relative-position self-attention encoders, the biaffine graph and
//! stack-pointer decoders, and the training loop.

pub mod autodiff;
pub mod decoder;
pub mod embeddings;
pub mod encoder;
pub mod model;
pub mod training;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("backward already ran on this graph")]
    BackwardTwice,
    #[error("variable does not belong to this graph")]
    DetachedGraph,
    #[error("gradient checking needs double precision")]
    SinglePrecisionGradCheck,
    #[error("empty input sequence")]
    EmptySequence,
    #[error("unknown POS tag {0:?}")]
    UnknownPos(String),
    #[error("unknown dependency label {0:?}")]
    UnknownLabel(String),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
    #[error("no gradient for trainable parameter {0:?}")]
    MissingGradient(String),
    #[error("no training sentences left after length filtering")]
    EmptyTreebank,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("embedding file line {line}: {message}")]
    Embedding { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
