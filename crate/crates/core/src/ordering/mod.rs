//! Total-order broadcast for endorsed envelopes: batch cutting plus Raft
//! replication across an orderer cluster. Solo mode is a one-member cluster.

mod cutter;
mod node;
pub mod raft;
mod service;
pub mod sim;
pub mod tcp;
pub mod wire;

use thiserror::Error;

pub use cutter::{cut_batch, BatchPayload, OrderingConfig, OrderingMode, PendingQueue};
pub use node::{DeliveredBatch, OrdererNode};
pub use raft::NodeId;
pub use service::{
    digest_batches, now_ms, DeliveryLog, InProcTransport, NodeInput, OrderingService, RaftOrderer, RuntimeConfig,
    Transport,
};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum OrderError {
    #[error("not the leader (leader hint: {0:?})")]
    NotLeader(Option<NodeId>),
    #[error("orderer queue full")]
    QueueFull,
    #[error("no orderer available")]
    OrdererUnavailable,
    #[error("requested block {requested} is beyond delivered height {height}")]
    AheadOfChain { requested: u64, height: u64 },
    #[error("invalid ordering config: {0}")]
    InvalidConfig(String),
}

/// Starts the configured ordering backend over the in-process transport.
pub fn start(config: OrderingConfig) -> Result<std::sync::Arc<RaftOrderer>, OrderError> {
    let runtime = RuntimeConfig::for_ordering(&config);
    RaftOrderer::start(config, runtime)
}
