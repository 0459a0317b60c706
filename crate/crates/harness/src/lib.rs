//! Curriculum pretraining, synthetic cloze QA, fine-tuning and evaluation.

pub mod base;
pub mod config;
pub mod finetune;
pub mod metrics;
pub mod plot;
pub mod pretrain;
pub mod qa;
pub mod runlog;
pub mod workspace;

use std::path::PathBuf;

use kgc_core::curriculum::CurriculumError;
use kgc_core::kg::KgError;
use kgc_core::tokenizer::TokenizerError;
use kgc_neural::NeuralError;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum HarnessError {
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("run log: {0}")]
    RunLog(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}
