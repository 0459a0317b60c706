//! Transformer encoder with an adapter stack, manual backpropagation, AdamW
//! and checkpointing.

pub mod checkpoint;
pub mod element;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum NeuralError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("no labelled positions in example")]
    DegenerateBatch,
    #[error("schedule step {step} is past the final step {total}")]
    Schedule { step: u64, total: u64 },
    #[error("checkpoint integrity: {0}")]
    Integrity(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Manifest { path: PathBuf, source: serde_json::Error },
}

pub type Result<T> = std::result::Result<T, NeuralError>;
