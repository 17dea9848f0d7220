//! TriAN: a three-way attentive network for multiple-choice reading
//! comprehension, with knowledge-graph relation features, built on a small
//! self-contained reverse-mode differentiation engine.
//!
//! Module map:
//!
//! - [`tensor`]: dense arrays, gradient tape, seedable RNG
//! - [`corpus`]: datasets, vocabularies, embeddings, knowledge index, term frequencies
//! - [`featurize`]: relation ids, handcrafted features, padded batches
//! - [`model`]: the network and its layers
//! - [`optim`]: loss, Adamax, clipping, schedule, embedding freezing, training loop
//! - [`checkpoint`]: named-parameter persistence
//! - [`eval`]: group accuracy, prediction and ensembling
//! - [`config`]: layered run configuration

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod featurize;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod synthetic;
pub mod tensor;

pub use tensor::{EngineRng, ParamStore, Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Train(#[from] optim::TrainError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
}

pub type Result<T> = std::result::Result<T, Error>;
