//! Deterministic federated-learning simulator with rescue-factor model
//! aggregation.
//!
//! Every client shares a frozen auxiliary embedder (the *prior*). At the start
//! of a round a client measures, per class, how far the received global
//! model's projected features are from the prior's embeddings (`w_k`), trains
//! locally on a balanced-softmax loss plus a distillation term while tracking
//! the same divergence (`ŵ_k`), and sends back its parameters together with a
//! single scalar, the rescue factor `RF = Σ_k w_k·ŵ_k`. The server averages
//! client models weighted by normalized rescue factors. A sample-count FedAvg
//! baseline, with and without the distillation term, runs through the same
//! machinery.
//!
//! Modules, bottom up: [`numerics`] (dense math, MLP, SGD), [`data`]
//! (synthetic long-tailed data and partitions), [`prior`], [`losses`],
//! [`client`], [`server`], [`eval`], and the [`config`]/[`runner`] pair that
//! backs the `fedmas` binary.

pub mod client;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod numerics;
pub mod prior;
pub mod rng;
pub mod runner;
pub mod server;

pub use client::{
    local_update, measure_global_divergence, rescue_factor, ClientModel, ClientReply, ClientState,
};
pub use config::{ExperimentConfig, Method};
pub use error::{Error, Result};
pub use eval::{evaluate, MetricsReport};
pub use server::{fedavg_aggregate, mas_aggregate, run_federation, GlobalState, RoundReport};
