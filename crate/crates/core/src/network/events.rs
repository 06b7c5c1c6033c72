use std::collections::HashMap;

use crossbeam_channel::{unbounded, Receiver, Sender};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::ledger::{ChaincodeEvent, ValidationCode};

/// Per-transaction notification emitted once its block is committed on
/// every peer of the channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitEvent {
    pub channel: String,
    pub block_number: u64,
    pub block_timestamp_ms: u64,
    pub tx_index: u64,
    pub tx_id: String,
    pub submitter: String,
    pub flag: ValidationCode,
    pub chaincode_event: Option<ChaincodeEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventFilter {
    All,
    TxId(String),
    /// Valid transactions carrying a chaincode event of this name.
    EventName(String),
}

impl EventFilter {
    fn matches(&self, ev: &CommitEvent) -> bool {
        match self {
            EventFilter::All => true,
            EventFilter::TxId(id) => &ev.tx_id == id,
            EventFilter::EventName(name) => {
                ev.flag.is_valid() && ev.chaincode_event.as_ref().is_some_and(|c| &c.name == name)
            }
        }
    }
}

/// Fan-out of commit events. Sends never block. Tx-id subscriptions are
/// one-shot; other subscribers are pruned once their receiver is dropped.
#[derive(Default)]
pub struct EventBus {
    inner: Mutex<Subscribers>,
}

#[derive(Default)]
struct Subscribers {
    by_tx: HashMap<String, Vec<Sender<CommitEvent>>>,
    other: Vec<(EventFilter, Sender<CommitEvent>)>,
}

impl EventBus {
    pub fn subscribe(&self, filter: EventFilter) -> Receiver<CommitEvent> {
        let (tx, rx) = unbounded();
        let mut inner = self.inner.lock();
        match filter {
            EventFilter::TxId(id) => inner.by_tx.entry(id).or_default().push(tx),
            f => inner.other.push((f, tx)),
        }
        rx
    }

    pub fn publish(&self, events: &[CommitEvent]) {
        let mut inner = self.inner.lock();
        for ev in events {
            if let Some(subs) = inner.by_tx.remove(&ev.tx_id) {
                for s in subs {
                    let _ = s.send(ev.clone());
                }
            }
            inner.other.retain(|(f, s)| !f.matches(ev) || s.send(ev.clone()).is_ok());
        }
    }

    /// Drops tx-id subscriptions for a transaction that will not commit.
    pub fn forget_tx(&self, tx_id: &str) {
        self.inner.lock().by_tx.remove(tx_id);
    }

    pub fn subscriber_count(&self) -> usize {
        let inner = self.inner.lock();
        inner.by_tx.values().map(Vec::len).sum::<usize>() + inner.other.len()
    }
}
