//! Federated zero-shot learning simulator.
//!
//! Clients with pairwise-disjoint seen classes train conditional WGAN-GP
//! feature generators on their own rows; a server averages either the whole
//! generator/discriminator pair or the generator alone; the resulting
//! generator synthesizes features for classes nobody trained on, and a
//! softmax classifier fitted to those pseudo-features is scored on the real
//! unseen rows.

pub mod attack;
pub mod data;
pub mod digest;
pub mod error;
pub mod eval;
pub mod fed;
pub mod numerics;
pub mod rng;
pub mod semantics;

pub use data::{ClientPartition, Dataset, LabeledFeatures};
pub use error::{Error, Result};
pub use fed::{AggregationMode, FedConfig};
pub use numerics::{GanArch, GanModel, Linear, Matrix, MlpParams};
pub use rng::{derive_rng, Party, RngStream};
pub use semantics::{EmbeddingTable, SkaConfig};
