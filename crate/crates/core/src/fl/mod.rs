//! Federated training: availability sampling, teacher pretraining, local
//! updates on the composite loss, prototype and model aggregation, and the
//! baseline strategies.

mod aggregate;
mod client;
mod config;
mod objective;
mod prototypes;
mod run;

pub use aggregate::{aggregate_models, model_weights, sample_availability};
pub use client::{client_update, pretrain_teacher, shard_loss, ClientState, ClientUpdate};
pub use config::{local_loss, LossWeights, PrototypeDistance, RoundConfig, Strategy};
pub use objective::{global_objective_value, objective_terms, ObjectiveTerm};
pub use prototypes::{
    aggregate_prototypes, batch_regularization, compute_prototypes, infer_all, prototypes_from_embeddings,
    regularization_term, Prototype, PrototypeSet,
};
pub use run::{
    init_clients, predict, run_training, GlobalState, ModelSpecs, RoundReport, TrainingRun, TransferLedger,
};

use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum FlError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("client {client} diverged in round {round}: {message}")]
    Divergence { client: usize, round: usize, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}
