//! Live ordering runtime: one event-loop thread per orderer node, a pluggable
//! transport between them, and a client that redirects and resubmits.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};
use log::{debug, warn};
use parking_lot::Mutex;
use sha2::{Digest, Sha256};

use super::cutter::{BatchPayload, OrderingConfig, OrderingMode};
use super::node::{DeliveredBatch, OrdererNode};
use super::raft::{Envelope, RaftConfig};
use super::{NodeId, OrderError};
use crate::ledger::Transaction;

/// Submit/deliver contract shared by every ordering backend.
pub trait OrderingService: Send + Sync {
    /// Accepts an envelope for ordering. An `Ok` means the service took
    /// responsibility for it; delivery happens later.
    fn submit(&self, tx: Transaction) -> Result<(), OrderError>;

    /// Every batch with sequence number >= `from`, then live batches.
    fn deliver(&self, from: u64) -> Result<Receiver<DeliveredBatch>, OrderError>;

    /// Number of batches delivered so far.
    fn height(&self) -> u64;

    fn shutdown(&self);
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Append-only log of delivered batches with fan-out to subscribers.
#[derive(Default)]
pub struct DeliveryLog {
    inner: Mutex<DeliveryInner>,
}

#[derive(Default)]
struct DeliveryInner {
    batches: Vec<DeliveredBatch>,
    subscribers: Vec<Sender<DeliveredBatch>>,
}

impl DeliveryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn height(&self) -> u64 {
        self.inner.lock().batches.len() as u64
    }

    /// Appends `batch` if it is the next sequence number. Returns `false`
    /// when it was already present (and checks it is identical).
    pub fn publish(&self, batch: DeliveredBatch) -> Result<bool, DeliveredBatch> {
        let mut inner = self.inner.lock();
        let height = inner.batches.len() as u64;
        if batch.seq < height {
            let existing = &inner.batches[batch.seq as usize];
            return if existing.payload == batch.payload { Ok(false) } else { Err(existing.clone()) };
        }
        assert_eq!(batch.seq, height, "delivery sequence gap");
        inner.subscribers.retain(|s| s.send(batch.clone()).is_ok());
        inner.batches.push(batch);
        Ok(true)
    }

    pub fn subscribe(&self, from: u64) -> Result<Receiver<DeliveredBatch>, OrderError> {
        let mut inner = self.inner.lock();
        let height = inner.batches.len() as u64;
        if from > height {
            return Err(OrderError::AheadOfChain { requested: from, height });
        }
        let (tx, rx) = unbounded();
        for b in &inner.batches[from as usize..] {
            let _ = tx.send(b.clone());
        }
        inner.subscribers.push(tx);
        Ok(rx)
    }

    pub fn snapshot(&self) -> Vec<DeliveredBatch> {
        self.inner.lock().batches.clone()
    }

    /// SHA-256 over the delivered sequence, for agreement checks.
    pub fn digest(&self) -> [u8; 32] {
        digest_batches(&self.inner.lock().batches)
    }
}

pub fn digest_batches(batches: &[DeliveredBatch]) -> [u8; 32] {
    let mut h = Sha256::new();
    for b in batches {
        h.update(b.seq.to_be_bytes());
        h.update(b.payload.timestamp_ms.to_be_bytes());
        for tx in &b.payload.transactions {
            h.update(tx.canonical_bytes());
        }
    }
    h.finalize().into()
}

pub enum NodeInput {
    Message(Envelope<BatchPayload>),
    Submit(Transaction, Option<Sender<Result<(), OrderError>>>),
    Stop,
}

/// Carries Raft messages between orderer event loops.
pub trait Transport: Send + Sync {
    fn send(&self, env: Envelope<BatchPayload>);
}

/// Channel-based transport for nodes in one process.
#[derive(Default)]
pub struct InProcTransport {
    inboxes: Mutex<BTreeMap<NodeId, (Sender<NodeInput>, Arc<AtomicBool>)>>,
}

impl InProcTransport {
    pub fn register(&self, id: NodeId, inbox: Sender<NodeInput>, alive: Arc<AtomicBool>) {
        self.inboxes.lock().insert(id, (inbox, alive));
    }
}

impl Transport for InProcTransport {
    fn send(&self, env: Envelope<BatchPayload>) {
        if let Some((inbox, alive)) = self.inboxes.lock().get(&env.to) {
            if alive.load(Ordering::Acquire) {
                let _ = inbox.send(NodeInput::Message(env));
            }
        }
    }
}

/// Live-mode timing knobs.
#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub tick: Duration,
    /// Client resubmission delay for envelopes not yet delivered.
    pub resubmit_after: Duration,
    pub seed: u64,
}

impl RuntimeConfig {
    pub fn for_ordering(config: &OrderingConfig) -> Self {
        RuntimeConfig {
            tick: Duration::from_millis(10),
            resubmit_after: config.batch_timeout * 2 + Duration::from_millis(500),
            seed: 0x5eed,
        }
    }
}

struct NodeHandle {
    inbox: Sender<NodeInput>,
    alive: Arc<AtomicBool>,
    log: Arc<DeliveryLog>,
}

struct Shared {
    nodes: BTreeMap<NodeId, NodeHandle>,
    log: DeliveryLog,
    outstanding: Mutex<BTreeMap<String, Outstanding>>,
    leader: AtomicU64,
    capacity: usize,
    runtime: RuntimeConfig,
    stopped: AtomicBool,
    disagreements: AtomicU64,
}

/// An envelope not yet delivered. `accepted` is false while no leader has
/// taken it, and such envelopes are retried on every sweep.
struct Outstanding {
    tx: Transaction,
    sent: Instant,
    accepted: bool,
}

impl Shared {
    fn mark_accepted(&self, tx_id: &str, accepted: bool) {
        if let Some(o) = self.outstanding.lock().get_mut(tx_id) {
            o.accepted = accepted;
        }
    }

    fn alive(&self, id: NodeId) -> bool {
        self.nodes.get(&id).is_some_and(|n| n.alive.load(Ordering::Acquire))
    }

    fn publish(&self, batch: DeliveredBatch) {
        match self.log.publish(batch.clone()) {
            Ok(true) => {
                let mut outstanding = self.outstanding.lock();
                for tx in &batch.payload.transactions {
                    outstanding.remove(&tx.tx_id);
                }
            }
            Ok(false) => {}
            Err(existing) => {
                self.disagreements.fetch_add(1, Ordering::Relaxed);
                warn!("orderers disagree at seq {}: {:?} vs {:?}", batch.seq, existing.payload, batch.payload);
            }
        }
    }

    /// Sends to the believed leader, following redirects. `false` when no
    /// live leader accepted it.
    fn route(&self, tx: &Transaction) -> Result<bool, OrderError> {
        let mut target = self.leader.load(Ordering::Acquire);
        for _ in 0..=self.nodes.len() {
            if target == 0 || !self.alive(target) {
                target = match self.nodes.keys().copied().find(|&id| self.alive(id)) {
                    Some(id) => id,
                    None => return Err(OrderError::OrdererUnavailable),
                };
            }
            let (reply_tx, reply_rx) = bounded(1);
            let node = &self.nodes[&target];
            if node.inbox.send(NodeInput::Submit(tx.clone(), Some(reply_tx))).is_err() {
                target = 0;
                continue;
            }
            match reply_rx.recv_timeout(Duration::from_secs(2)) {
                Ok(Ok(())) => {
                    self.leader.store(target, Ordering::Release);
                    return Ok(true);
                }
                Ok(Err(OrderError::NotLeader(Some(hint)))) if hint != target => target = hint,
                Ok(Err(OrderError::NotLeader(_))) => return Ok(false),
                Ok(Err(e)) => return Err(e),
                Err(_) => target = 0,
            }
        }
        Ok(false)
    }
}

/// Raft-replicated ordering cluster. A one-member cluster is the solo mode.
pub struct RaftOrderer {
    shared: Arc<Shared>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl RaftOrderer {
    /// Starts a cluster over the in-process transport.
    pub fn start(config: OrderingConfig, runtime: RuntimeConfig) -> Result<Arc<Self>, OrderError> {
        let transport = Arc::new(InProcTransport::default());
        Self::start_with(config, runtime, |id, inbox, alive| {
            transport.register(id, inbox.clone(), alive.clone());
            Ok(transport.clone() as Arc<dyn Transport>)
        })
    }

    /// Starts a cluster whose nodes exchange Raft traffic over TCP, one
    /// listening address per member.
    pub fn start_tcp(
        config: OrderingConfig,
        runtime: RuntimeConfig,
        addrs: BTreeMap<NodeId, std::net::SocketAddr>,
    ) -> Result<Arc<Self>, OrderError> {
        Self::start_with(config, runtime, |id, inbox, alive| {
            let addr = addrs.get(&id).ok_or_else(|| OrderError::InvalidConfig(format!("no address for node {id}")))?;
            let listener = std::net::TcpListener::bind(addr)
                .map_err(|e| OrderError::InvalidConfig(format!("bind {addr}: {e}")))?;
            super::tcp::spawn_listener(listener, inbox.clone(), alive.clone());
            Ok(Arc::new(super::tcp::TcpTransport::new(addrs.clone())) as Arc<dyn Transport>)
        })
    }

    fn start_with(
        config: OrderingConfig,
        runtime: RuntimeConfig,
        mut transport_for: impl FnMut(NodeId, &Sender<NodeInput>, &Arc<AtomicBool>) -> Result<Arc<dyn Transport>, OrderError>,
    ) -> Result<Arc<Self>, OrderError> {
        config.validate()?;
        let members = match config.mode {
            OrderingMode::Solo => vec![1],
            OrderingMode::Raft => config.cluster.clone(),
        };
        let mut handles = BTreeMap::new();
        let mut inboxes = Vec::new();
        for &id in &members {
            let (tx, rx) = unbounded();
            let alive = Arc::new(AtomicBool::new(true));
            let transport = transport_for(id, &tx, &alive)?;
            handles.insert(id, NodeHandle { inbox: tx, alive, log: Arc::new(DeliveryLog::new()) });
            inboxes.push((id, rx, transport));
        }
        let shared = Arc::new(Shared {
            nodes: handles,
            log: DeliveryLog::new(),
            outstanding: Mutex::new(BTreeMap::new()),
            leader: AtomicU64::new(0),
            capacity: config.queue_capacity,
            runtime: runtime.clone(),
            stopped: AtomicBool::new(false),
            disagreements: AtomicU64::new(0),
        });
        let mut threads = Vec::new();
        for (id, rx, transport) in inboxes {
            let mut raft = RaftConfig::new(id, members.clone(), runtime.seed);
            if members.len() == 1 {
                raft.election_ticks_min = 1;
                raft.election_ticks_max = 1;
            }
            let node = OrdererNode::new(config.clone(), raft);
            let shared = shared.clone();
            threads.push(
                std::thread::Builder::new()
                    .name(format!("orderer-{id}"))
                    .spawn(move || run_node(node, rx, transport, shared))
                    .expect("spawn orderer"),
            );
        }
        let retry_shared = shared.clone();
        threads.push(
            std::thread::Builder::new()
                .name("orderer-client".into())
                .spawn(move || resubmit_loop(retry_shared))
                .expect("spawn resubmitter"),
        );
        Ok(Arc::new(RaftOrderer { shared, threads: Mutex::new(threads) }))
    }

    pub fn members(&self) -> Vec<NodeId> {
        self.shared.nodes.keys().copied().collect()
    }

    pub fn leader(&self) -> Option<NodeId> {
        match self.shared.leader.load(Ordering::Acquire) {
            0 => None,
            id if self.shared.alive(id) => Some(id),
            _ => None,
        }
    }

    /// Blocks until some live node is known to lead, or the timeout passes.
    pub fn wait_for_leader(&self, timeout: Duration) -> Option<NodeId> {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if let Some(l) = self.leader() {
                return Some(l);
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        None
    }

    /// Crash-stops a node: its loop exits and traffic to it is dropped.
    pub fn kill(&self, id: NodeId) {
        if let Some(node) = self.shared.nodes.get(&id) {
            node.alive.store(false, Ordering::Release);
            let _ = node.inbox.send(NodeInput::Stop);
        }
        let _ = self.shared.leader.compare_exchange(id, 0, Ordering::AcqRel, Ordering::Acquire);
    }

    /// Batches delivered by one particular node.
    pub fn node_log(&self, id: NodeId) -> Vec<DeliveredBatch> {
        self.shared.nodes.get(&id).map(|n| n.log.snapshot()).unwrap_or_default()
    }

    pub fn outstanding(&self) -> usize {
        self.shared.outstanding.lock().len()
    }

    /// Times two orderers reported different batches at the same sequence.
    pub fn disagreements(&self) -> u64 {
        self.shared.disagreements.load(Ordering::Relaxed)
    }
}

impl OrderingService for RaftOrderer {
    fn submit(&self, tx: Transaction) -> Result<(), OrderError> {
        if self.shared.stopped.load(Ordering::Acquire) || !self.shared.nodes.keys().any(|&id| self.shared.alive(id)) {
            return Err(OrderError::OrdererUnavailable);
        }
        {
            let mut outstanding = self.shared.outstanding.lock();
            if outstanding.len() >= self.shared.capacity {
                return Err(OrderError::QueueFull);
            }
            outstanding.insert(tx.tx_id.clone(), Outstanding { tx: tx.clone(), sent: Instant::now(), accepted: false });
        }
        match self.shared.route(&tx) {
            Ok(accepted) => {
                self.shared.mark_accepted(&tx.tx_id, accepted);
                Ok(())
            }
            Err(OrderError::QueueFull) => {
                self.shared.outstanding.lock().remove(&tx.tx_id);
                Err(OrderError::QueueFull)
            }
            Err(e) => Err(e),
        }
    }

    fn deliver(&self, from: u64) -> Result<Receiver<DeliveredBatch>, OrderError> {
        self.shared.log.subscribe(from)
    }

    fn height(&self) -> u64 {
        self.shared.log.height()
    }

    fn shutdown(&self) {
        if self.shared.stopped.swap(true, Ordering::AcqRel) {
            return;
        }
        for node in self.shared.nodes.values() {
            node.alive.store(false, Ordering::Release);
            let _ = node.inbox.send(NodeInput::Stop);
        }
        for t in self.threads.lock().drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for RaftOrderer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn run_node(mut node: OrdererNode, inbox: Receiver<NodeInput>, transport: Arc<dyn Transport>, shared: Arc<Shared>) {
    let id = node.id();
    let tick = shared.runtime.tick;
    let mut next_tick = Instant::now() + tick;
    let mut published = 0usize;
    let node_log = shared.nodes[&id].log.clone();
    loop {
        let wait = next_tick.saturating_duration_since(Instant::now());
        let out = match inbox.recv_timeout(wait) {
            Ok(NodeInput::Stop) | Err(RecvTimeoutError::Disconnected) => break,
            Ok(NodeInput::Message(env)) => node.handle(env),
            Ok(NodeInput::Submit(tx, reply)) => match node.submit(tx, now_ms()) {
                Ok(out) => {
                    if let Some(r) = reply {
                        let _ = r.send(Ok(()));
                    }
                    out
                }
                Err(e) => {
                    if let Some(r) = reply {
                        let _ = r.send(Err(e));
                    }
                    Vec::new()
                }
            },
            Err(RecvTimeoutError::Timeout) => {
                next_tick += tick;
                if next_tick < Instant::now() {
                    next_tick = Instant::now() + tick;
                }
                node.tick(now_ms())
            }
        };
        if !shared.nodes[&id].alive.load(Ordering::Acquire) {
            break;
        }
        for env in out {
            transport.send(env);
        }
        if node.is_leader() {
            shared.leader.store(id, Ordering::Release);
        }
        let delivered = node.delivered();
        while published < delivered.len() {
            let batch = delivered[published].clone();
            let _ = node_log.publish(batch.clone());
            shared.publish(batch);
            published += 1;
        }
    }
    debug!("orderer {id} stopped");
}

fn resubmit_loop(shared: Arc<Shared>) {
    while !shared.stopped.load(Ordering::Acquire) {
        std::thread::sleep(Duration::from_millis(50));
        let due: Vec<Transaction> = {
            let mut outstanding = shared.outstanding.lock();
            let now = Instant::now();
            outstanding
                .values_mut()
                .filter(|o| !o.accepted || now.duration_since(o.sent) >= shared.runtime.resubmit_after)
                .map(|o| {
                    o.sent = now;
                    o.tx.clone()
                })
                .collect()
        };
        if !due.is_empty() {
            debug!("resubmitting {} envelopes", due.len());
        }
        for tx in due {
            match shared.route(&tx) {
                Ok(accepted) => shared.mark_accepted(&tx.tx_id, accepted),
                Err(_) => break,
            }
        }
    }
}
