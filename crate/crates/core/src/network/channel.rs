use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError};
use log::{error, info};
use parking_lot::{Mutex, RwLock};

use super::check::PolicyCheck;
use super::events::{CommitEvent, EventBus, EventFilter};
use super::peer::{Peer, PeerChannel};
use super::topology::ChannelConfig;
use super::{NetworkError, NetworkOptions};
use crate::chaincode::Chaincode;
use crate::identity::{Membership, Signature};
use crate::ledger::{check_endorsements, Block, Hash32, ReadWriteSet, Transaction};
use crate::ordering::{DeliveredBatch, OrderingService, RaftOrderer, RuntimeConfig};

/// Next block to build on the channel.
struct Tip {
    number: u64,
    prev_hash: Hash32,
}

/// One channel: its config, joined peers, ordering service, commit
/// pipeline and event bus.
pub struct Channel {
    config: RwLock<ChannelConfig>,
    chaincodes: RwLock<Vec<Arc<dyn Chaincode>>>,
    peers: RwLock<Vec<Arc<Peer>>>,
    membership: Arc<RwLock<Membership>>,
    orderer: Arc<RaftOrderer>,
    events: EventBus,
    /// Held while a block is committed to the peers, and while a peer joins.
    tip: Mutex<Tip>,
    /// Block number of delivered batch 0.
    base: u64,
    height: AtomicU64,
    halted: Mutex<Option<String>>,
    stop: AtomicBool,
    thread: Mutex<Option<JoinHandle<()>>>,
}

/// Block 0: a single config transaction carrying the channel config.
pub fn genesis_block(config: &ChannelConfig) -> Block {
    let tx = Transaction {
        tx_id: format!("genesis-{}", config.name),
        channel: config.name.clone(),
        chaincode_id: "_config".into(),
        method: "config".into(),
        args: vec![serde_json::to_string(config).expect("config serializes")],
        rwset: ReadWriteSet::default(),
        event: None,
        endorsements: vec![],
        submitter: String::new(),
        timestamp_ms: 0,
        client_signature: Signature { signer: String::new(), bytes: vec![] },
    };
    Block::new(0, Hash32::ZERO, 0, vec![tx])
}

impl Channel {
    pub(crate) fn start(
        config: ChannelConfig,
        peers: Vec<Arc<Peer>>,
        chaincodes: Vec<Arc<dyn Chaincode>>,
        membership: Arc<RwLock<Membership>>,
        options: &NetworkOptions,
    ) -> Result<Arc<Self>, NetworkError> {
        let genesis = genesis_block(&config);
        let mut replicas: Vec<Arc<PeerChannel>> = Vec::new();
        for p in &peers {
            let pc = p.open_channel(&config.name)?;
            for cc in &chaincodes {
                pc.install(cc.clone());
            }
            if pc.ledger().read().height() == 0 {
                pc.ledger().write().commit_block(genesis.clone(), &crate::ledger::AcceptAll)?;
            }
            replicas.push(pc);
        }
        // Peers left behind by an interrupted run catch up from the longest.
        let longest = replicas.iter().max_by_key(|r| r.ledger().read().height()).cloned();
        if let Some(src) = &longest {
            let blocks = src.ledger().read().store().blocks().to_vec();
            for r in &replicas {
                replay(r, &blocks, &membership.read(), &config)?;
            }
        }
        let (height, tip_hash) = match &longest {
            Some(src) => {
                let l = src.ledger().read();
                (l.height(), l.tip_hash())
            }
            None => (1, genesis.hash()),
        };
        let orderer = RaftOrderer::start(options.ordering.clone(), RuntimeConfig::for_ordering(&options.ordering))?;
        let channel = Arc::new(Channel {
            config: RwLock::new(config),
            chaincodes: RwLock::new(chaincodes),
            peers: RwLock::new(peers),
            membership,
            orderer,
            events: EventBus::default(),
            tip: Mutex::new(Tip { number: height, prev_hash: tip_hash }),
            base: height,
            height: AtomicU64::new(height),
            halted: Mutex::new(None),
            stop: AtomicBool::new(false),
            thread: Mutex::new(None),
        });
        let rx = channel.orderer.deliver(0)?;
        let worker = channel.clone();
        let handle = std::thread::Builder::new()
            .name(format!("commit-{}", channel.name()))
            .spawn(move || worker.run_pipeline(rx))
            .expect("spawn commit pipeline");
        *channel.thread.lock() = Some(handle);
        info!("channel {} up at height {height}", channel.name());
        Ok(channel)
    }

    pub fn name(&self) -> String {
        self.config.read().name.clone()
    }

    pub fn config(&self) -> ChannelConfig {
        self.config.read().clone()
    }

    pub fn peers(&self) -> Vec<Arc<Peer>> {
        self.peers.read().clone()
    }

    pub fn orderer(&self) -> &Arc<RaftOrderer> {
        &self.orderer
    }

    pub fn events(&self) -> &EventBus {
        &self.events
    }

    /// Committed height (number of blocks, genesis included).
    pub fn height(&self) -> u64 {
        self.height.load(Ordering::Acquire)
    }

    pub fn halted(&self) -> Option<String> {
        self.halted.lock().clone()
    }

    pub fn subscribe(&self, filter: EventFilter) -> Receiver<CommitEvent> {
        self.events.subscribe(filter)
    }

    pub(crate) fn install(&self, cc: Arc<dyn Chaincode>) {
        let _tip = self.tip.lock();
        for p in self.peers.read().iter() {
            if let Some(pc) = p.channel(&self.name()) {
                pc.install(cc.clone());
            }
        }
        self.config.write().chaincodes.insert(cc.name().to_string());
        let mut list = self.chaincodes.write();
        list.retain(|c| c.name() != cc.name());
        list.push(cc);
    }

    pub(crate) fn join(&self, peer: Arc<Peer>) -> Result<(), NetworkError> {
        let _tip = self.tip.lock();
        let name = self.name();
        if self.peers.read().iter().any(|p| p.peer_id() == peer.peer_id()) {
            return Ok(());
        }
        let config = self.config();
        if !config.member_orgs.contains(peer.org_id()) {
            return Err(NetworkError::PolicyViolation(format!("org {} is not a member of {name}", peer.org_id())));
        }
        let pc = peer.open_channel(&name)?;
        for cc in self.chaincodes.read().iter() {
            pc.install(cc.clone());
        }
        let blocks = match self.peers.read().first().and_then(|p| p.channel(&name)) {
            Some(src) => src.ledger().read().store().blocks().to_vec(),
            None => vec![genesis_block(&config)],
        };
        replay(&pc, &blocks, &self.membership.read(), &config)?;
        self.peers.write().push(peer);
        Ok(())
    }

    pub(crate) fn submit(&self, tx: Transaction) -> Result<Receiver<CommitEvent>, NetworkError> {
        if let Some(reason) = self.halted() {
            return Err(NetworkError::Halted(reason));
        }
        let tx_id = tx.tx_id.clone();
        let rx = self.events.subscribe(EventFilter::TxId(tx_id.clone()));
        if let Err(e) = self.orderer.submit(tx) {
            self.events.forget_tx(&tx_id);
            return Err(e.into());
        }
        Ok(rx)
    }

    fn run_pipeline(self: Arc<Self>, rx: Receiver<DeliveredBatch>) {
        loop {
            match rx.recv_timeout(Duration::from_millis(100)) {
                Ok(batch) => {
                    if let Err(e) = self.commit_batch(&batch) {
                        error!("channel {} halted: {e}", self.name());
                        *self.halted.lock() = Some(e.to_string());
                        return;
                    }
                }
                Err(RecvTimeoutError::Timeout) => {
                    if self.stop.load(Ordering::Acquire) {
                        return;
                    }
                }
                Err(RecvTimeoutError::Disconnected) => return,
            }
        }
    }

    /// Turns a delivered batch into the next block and commits it on every
    /// joined peer. Events go out once all peers have it.
    fn commit_batch(&self, batch: &DeliveredBatch) -> Result<(), NetworkError> {
        let mut tip = self.tip.lock();
        let number = self.base + batch.seq;
        if number < tip.number {
            return Ok(());
        }
        if number != tip.number {
            return Err(NetworkError::Config(format!("delivery gap: expected block {}, got {number}", tip.number)));
        }
        let block = Block::new(number, tip.prev_hash, batch.payload.timestamp_ms, batch.payload.transactions.clone());
        let hash = block.hash();
        let policy = self.config.read().endorsement_policy.clone();
        let membership = self.membership.read();
        let check = PolicyCheck { membership: &membership, policy: &policy };
        let name = self.name();
        let mut flags = None;
        // Each peer validates the block on its own.
        for peer in self.peers.read().iter() {
            let pc = peer
                .channel(&name)
                .ok_or_else(|| NetworkError::NotJoined { peer: peer.peer_id().into(), channel: name.clone() })?;
            let checked = check_endorsements(&block, &check);
            let got = pc.ledger().write().commit_checked(block.clone(), checked)?;
            match &flags {
                None => flags = Some(got),
                Some(f) if *f != got => {
                    return Err(NetworkError::Config(format!("peer {} disagrees on flags of block {number}", peer.peer_id())))
                }
                Some(_) => {}
            }
        }
        drop(membership);
        let flags = flags.unwrap_or_default();
        tip.number = number + 1;
        tip.prev_hash = hash;
        self.height.store(number + 1, Ordering::Release);
        let events: Vec<CommitEvent> = block
            .transactions
            .iter()
            .zip(&flags)
            .enumerate()
            .map(|(i, (tx, flag))| CommitEvent {
                channel: name.clone(),
                block_number: number,
                block_timestamp_ms: block.timestamp_ms,
                tx_index: i as u64,
                tx_id: tx.tx_id.clone(),
                submitter: tx.submitter.clone(),
                flag: *flag,
                chaincode_event: tx.event.clone(),
            })
            .collect();
        drop(tip);
        self.events.publish(&events);
        Ok(())
    }

    pub(crate) fn shutdown(&self) {
        self.stop.store(true, Ordering::Release);
        self.orderer.shutdown();
        let handle = self.thread.lock().take();
        if let Some(h) = handle {
            if h.thread().id() != std::thread::current().id() {
                let _ = h.join();
            }
        }
    }
}

/// Commits the blocks `replica` lacks, re-validating each one.
fn replay(
    replica: &PeerChannel,
    blocks: &[Block],
    membership: &Membership,
    config: &ChannelConfig,
) -> Result<(), NetworkError> {
    let mut ledger = replica.ledger().write();
    let have = ledger.height() as usize;
    if have > blocks.len() {
        return Err(NetworkError::Config(format!(
            "replica is ahead of the channel ({have} > {} blocks)",
            blocks.len()
        )));
    }
    let check = PolicyCheck { membership, policy: &config.endorsement_policy };
    for b in &blocks[have..] {
        let mut b = b.clone();
        let expected = std::mem::take(&mut b.validation_flags);
        let flags = ledger.commit_block(b, &check)?;
        if !expected.is_empty() && flags != expected {
            return Err(NetworkError::Config("replayed block validated differently".into()));
        }
    }
    Ok(())
}
