//! Federated training: per-client local loops, server aggregation and
//! broadcast, and the round orchestrator.

mod checkpoint;
mod client;
mod config;
mod orchestrator;
mod server;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointPaths};
pub use client::{local_train, pretrain_local_classifier, ClientState, LocalLosses};
pub use config::{AggregationMode, FedConfig};
pub use orchestrator::{
    build_arch, default_embeddings, run_federation, train_centralized, Federation,
    FederationOutcome, RoundMetrics,
};
pub use server::{aggregate, broadcast, round_traffic, select_clients, GlobalUpdate, Upload};

pub(crate) use client::argmax_rows;
