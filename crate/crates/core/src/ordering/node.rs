use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use log::debug;

use super::cutter::{cut_batch, BatchPayload, OrderingConfig, PendingQueue};
use super::raft::{EntryData, Envelope, Input, RaftConfig, RaftNode, RaftRole};
use super::{NodeId, OrderError};
use crate::ledger::Transaction;

/// One block's worth of ordered envelopes with its delivery sequence number
/// (0-based, contiguous).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveredBatch {
    pub seq: u64,
    pub payload: Arc<BatchPayload>,
}

/// A single orderer: Raft replica, batch cutter and de-duplicating delivery.
///
/// Committed log entries are filtered against every tx id already delivered,
/// so client resubmissions after a leader change can never produce a
/// duplicate. The filter depends only on log order, so every replica delivers
/// the identical sequence.
#[derive(Debug)]
pub struct OrdererNode {
    raft: RaftNode<BatchPayload>,
    config: OrderingConfig,
    pending: PendingQueue,
    proposed: HashSet<String>,
    delivered: Vec<DeliveredBatch>,
    delivered_ids: HashSet<String>,
}

impl OrdererNode {
    pub fn new(config: OrderingConfig, raft: RaftConfig) -> Self {
        OrdererNode {
            raft: RaftNode::new(raft),
            config,
            pending: PendingQueue::new(),
            proposed: HashSet::new(),
            delivered: Vec::new(),
            delivered_ids: HashSet::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.raft.id()
    }

    pub fn raft(&self) -> &RaftNode<BatchPayload> {
        &self.raft
    }

    pub fn is_leader(&self) -> bool {
        self.raft.is_leader()
    }

    pub fn leader_hint(&self) -> Option<NodeId> {
        self.raft.leader_id()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn delivered(&self) -> &[DeliveredBatch] {
        &self.delivered
    }

    pub fn is_delivered(&self, tx_id: &str) -> bool {
        self.delivered_ids.contains(tx_id)
    }

    /// Enqueues an envelope on the leader. Already-known tx ids are acked
    /// without being queued again.
    pub fn submit(&mut self, tx: Transaction, now_ms: u64) -> Result<Vec<Envelope<BatchPayload>>, OrderError> {
        if !self.raft.is_leader() {
            return Err(OrderError::NotLeader(self.raft.leader_id()));
        }
        if self.delivered_ids.contains(&tx.tx_id) || self.pending.contains(&tx.tx_id) || self.proposed.contains(&tx.tx_id)
        {
            return Ok(Vec::new());
        }
        if self.pending.len() >= self.config.queue_capacity {
            return Err(OrderError::QueueFull);
        }
        self.pending.push(tx, now_ms);
        Ok(self.cut_and_propose(now_ms, false))
    }

    /// One Raft tick plus the batch-timeout check.
    pub fn tick(&mut self, now_ms: u64) -> Vec<Envelope<BatchPayload>> {
        let mut out = self.raft.step(Input::Tick);
        self.after_step();
        if self.raft.is_leader() {
            let expired = self
                .pending
                .waiting_since_ms()
                .is_some_and(|since| Duration::from_millis(now_ms.saturating_sub(since)) >= self.config.batch_timeout);
            out.extend(self.cut_and_propose(now_ms, expired));
        }
        out
    }

    pub fn handle(&mut self, env: Envelope<BatchPayload>) -> Vec<Envelope<BatchPayload>> {
        let out = self.raft.step(Input::Message(env));
        self.after_step();
        out
    }

    fn cut_and_propose(&mut self, now_ms: u64, timer_expired: bool) -> Vec<Envelope<BatchPayload>> {
        let mut out = Vec::new();
        let mut expired = timer_expired;
        while let Some(transactions) = cut_batch(&mut self.pending, &self.config, expired) {
            expired = false;
            self.proposed.extend(transactions.iter().map(|t| t.tx_id.clone()));
            let payload = BatchPayload { timestamp_ms: now_ms, transactions };
            match self.raft.propose(payload) {
                Ok((index, msgs)) => {
                    debug!("orderer {} proposed batch at index {index}", self.id());
                    out.extend(msgs);
                }
                Err(_) => break,
            }
            self.pending.restart_timer(now_ms);
        }
        self.after_step();
        out
    }

    fn after_step(&mut self) {
        for (_, entry) in self.raft.take_committed() {
            let EntryData::Data(batch) = entry.data else { continue };
            let mut fresh = Vec::with_capacity(batch.transactions.len());
            for tx in batch.transactions {
                self.proposed.remove(&tx.tx_id);
                if self.delivered_ids.insert(tx.tx_id.clone()) {
                    fresh.push(tx);
                }
            }
            if fresh.is_empty() {
                continue;
            }
            let seq = self.delivered.len() as u64;
            self.delivered.push(DeliveredBatch {
                seq,
                payload: Arc::new(BatchPayload { timestamp_ms: batch.timestamp_ms, transactions: fresh }),
            });
        }
        if self.raft.role() != RaftRole::Leader && (!self.pending.is_empty() || !self.proposed.is_empty()) {
            // Clients resubmit whatever a deposed leader had not committed.
            self.pending.clear();
            self.proposed.clear();
        }
    }
}
