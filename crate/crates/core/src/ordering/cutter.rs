use std::collections::{HashSet, VecDeque};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::raft::NodeId;
use super::OrderError;
use crate::ledger::Transaction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderingMode {
    Solo,
    Raft,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrderingConfig {
    pub max_tx_per_block: usize,
    pub max_block_bytes: usize,
    #[serde(with = "duration_ms")]
    pub batch_timeout: Duration,
    pub mode: OrderingMode,
    pub cluster: Vec<NodeId>,
    /// Pending-queue bound per orderer; submissions beyond it get `QueueFull`.
    pub queue_capacity: usize,
}

impl Default for OrderingConfig {
    fn default() -> Self {
        OrderingConfig {
            max_tx_per_block: 50,
            max_block_bytes: 1 << 20,
            batch_timeout: Duration::from_millis(500),
            mode: OrderingMode::Solo,
            cluster: Vec::new(),
            queue_capacity: 100_000,
        }
    }
}

impl OrderingConfig {
    pub fn raft(cluster: Vec<NodeId>) -> Self {
        OrderingConfig { mode: OrderingMode::Raft, cluster, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), OrderError> {
        let bad = |m: &str| Err(OrderError::InvalidConfig(m.to_string()));
        if self.max_tx_per_block == 0 {
            return bad("max_tx_per_block must be >= 1");
        }
        if self.max_block_bytes == 0 {
            return bad("max_block_bytes must be >= 1");
        }
        if self.batch_timeout.is_zero() {
            return bad("batch_timeout must be positive");
        }
        if self.mode == OrderingMode::Raft {
            let unique: HashSet<_> = self.cluster.iter().collect();
            if self.cluster.len() < 3 || self.cluster.len() % 2 == 0 || unique.len() != self.cluster.len() {
                return bad("raft cluster must have an odd number (>= 3) of distinct nodes");
            }
        }
        Ok(())
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Ordered list of envelopes cut as one block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPayload {
    /// Cutting orderer's clock, ms since the epoch.
    pub timestamp_ms: u64,
    pub transactions: Vec<Transaction>,
}

/// Arrival-ordered pending envelopes with their encoded sizes.
#[derive(Debug, Default)]
pub struct PendingQueue {
    items: VecDeque<(Transaction, usize)>,
    ids: HashSet<String>,
    bytes: usize,
    /// When the oldest item not yet cut started waiting.
    waiting_since_ms: Option<u64>,
}

impl PendingQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn bytes(&self) -> usize {
        self.bytes
    }

    pub fn contains(&self, tx_id: &str) -> bool {
        self.ids.contains(tx_id)
    }

    pub fn push(&mut self, tx: Transaction, now_ms: u64) {
        let size = tx.encoded_len();
        self.ids.insert(tx.tx_id.clone());
        self.bytes += size;
        self.items.push_back((tx, size));
        self.waiting_since_ms.get_or_insert(now_ms);
    }

    pub fn waiting_since_ms(&self) -> Option<u64> {
        self.waiting_since_ms
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.ids.clear();
        self.bytes = 0;
        self.waiting_since_ms = None;
    }

    /// Restarts the batch timer for whatever remains after a cut.
    pub fn restart_timer(&mut self, now_ms: u64) {
        self.waiting_since_ms = if self.items.is_empty() { None } else { Some(now_ms) };
    }
}

/// Cuts a batch when the count or byte limit is reached, or when the timer
/// expired with anything pending. Arrival order is preserved and no batch
/// exceeds either limit (a single oversized envelope still goes alone).
pub fn cut_batch(pending: &mut PendingQueue, config: &OrderingConfig, timer_expired: bool) -> Option<Vec<Transaction>> {
    if pending.is_empty() {
        return None;
    }
    let full = pending.len() >= config.max_tx_per_block || pending.bytes >= config.max_block_bytes;
    if !full && !timer_expired {
        return None;
    }
    let mut out = Vec::new();
    let mut bytes = 0;
    while let Some((_, size)) = pending.items.front() {
        if out.len() >= config.max_tx_per_block || (!out.is_empty() && bytes + size > config.max_block_bytes) {
            break;
        }
        let (tx, size) = pending.items.pop_front().expect("front exists");
        bytes += size;
        pending.bytes -= size;
        pending.ids.remove(&tx.tx_id);
        out.push(tx);
    }
    Some(out)
}
