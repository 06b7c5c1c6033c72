//! Channels and peers: endorsement across peers, policy evaluation,
//! submission to ordering, and the per-channel commit pipeline that turns
//! delivered batches into blocks on every joined peer.

mod channel;
mod check;
mod events;
mod peer;
pub mod policy;
mod topology;
mod wallet;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{RwLock, RwLockReadGuard};
use thiserror::Error;

pub use channel::Channel;
pub use check::PolicyCheck;
pub use events::{CommitEvent, EventBus, EventFilter};
pub use peer::{Peer, PeerChannel, Proposal, ProposalResponse};
pub use policy::{PolicyExpr, PolicyParseError};
pub use topology::{ChannelConfig, ChannelSpec, OrgSpec, Topology, UserSpec, DONATION_CHANNEL};
pub use wallet::{read_key_file, Wallet, WalletFile};

use crate::chaincode::{Chaincode, ChaincodeError};
use crate::donation::DonationChaincode;
use crate::identity::{Identity, IdentityError, Membership, MembershipDoc, OrgId, Role, SigningKey};
use crate::ledger::{ChaincodeEvent, Endorsement, Hash32, LedgerError, Transaction, ValidationCode};
use crate::ordering::{now_ms, OrderError, OrderingConfig};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("unknown organization `{0}`")]
    UnknownOrg(OrgId),
    #[error("policy violation: {0}")]
    PolicyViolation(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("channel `{0}` already exists")]
    ChannelExists(String),
    #[error("unknown peer `{0}`")]
    UnknownPeer(String),
    #[error("peer {peer} has not joined channel {channel}")]
    NotJoined { peer: String, channel: String },
    #[error("chaincode {chaincode} is not installed on peer {peer}")]
    ChaincodeNotInstalled { peer: String, chaincode: String },
    #[error("unknown chaincode `{0}`")]
    UnknownChaincode(String),
    #[error("unknown identity `{0}`")]
    UnknownIdentity(String),
    #[error("no signing key for identity `{0}`")]
    NoSigningKey(String),
    #[error(transparent)]
    Chaincode(#[from] ChaincodeError),
    #[error("endorsements disagree: {0}")]
    EndorsementMismatch(String),
    #[error("endorsement policy cannot be satisfied: {0}")]
    NoEndorsers(String),
    #[error(transparent)]
    Order(#[from] OrderError),
    #[error("commit of {tx_id} not observed within the timeout")]
    CommitTimeout { tx_id: String },
    #[error("channel halted: {0}")]
    Halted(String),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding: {0}")]
    Encoding(#[from] serde_json::Error),
}

/// Outcome of a transaction after its block committed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitReceipt {
    pub tx_id: String,
    pub block_number: u64,
    pub block_timestamp_ms: u64,
    pub flag: ValidationCode,
    /// Chaincode response payload from endorsement.
    pub payload: Vec<u8>,
    pub event: Option<ChaincodeEvent>,
}

#[derive(Debug, Clone)]
pub struct NetworkOptions {
    pub ordering: OrderingConfig,
    /// Root for peer ledgers, membership and wallet. `None` keeps
    /// everything in memory.
    pub data_dir: Option<PathBuf>,
    pub commit_timeout: Duration,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        NetworkOptions { ordering: OrderingConfig::default(), data_dir: None, commit_timeout: Duration::from_secs(30) }
    }
}

/// Built-in chaincode by name.
pub fn builtin_chaincode(name: &str) -> Option<Arc<dyn Chaincode>> {
    match name {
        crate::donation::CHAINCODE_NAME => Some(Arc::new(DonationChaincode)),
        _ => None,
    }
}

pub struct Network {
    membership: Arc<RwLock<Membership>>,
    peers: RwLock<BTreeMap<String, Arc<Peer>>>,
    channels: RwLock<BTreeMap<String, Arc<Channel>>>,
    options: NetworkOptions,
    round_robin: AtomicUsize,
}

impl Network {
    pub fn new(membership: Membership, options: NetworkOptions) -> Arc<Self> {
        Arc::new(Network {
            membership: Arc::new(RwLock::new(membership)),
            peers: RwLock::new(BTreeMap::new()),
            channels: RwLock::new(BTreeMap::new()),
            options,
            round_robin: AtomicUsize::new(0),
        })
    }

    /// Builds a network from a topology. With a data dir, a previous run's
    /// membership, keys and ledgers are reused.
    pub fn bootstrap(topology: &Topology, data_dir: Option<&Path>) -> Result<(Arc<Self>, Wallet), NetworkError> {
        let membership_file = data_dir.map(|d| d.join("membership.json"));
        let (membership, wallet) = match &membership_file {
            Some(f) if f.exists() => {
                let doc: MembershipDoc = serde_json::from_slice(&std::fs::read(f)?)?;
                let wallet = Wallet::load(&data_dir.expect("set").join("wallet"))?;
                (Membership::import(doc)?, wallet)
            }
            _ => {
                let (m, w) = enroll_topology(topology)?;
                if let (Some(f), Some(dir)) = (&membership_file, data_dir) {
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(f, serde_json::to_vec_pretty(&m.export())?)?;
                    w.save(&dir.join("wallet"))?;
                }
                (m, w)
            }
        };
        let options = NetworkOptions {
            ordering: topology.orderer.clone(),
            data_dir: data_dir.map(Path::to_path_buf),
            ..NetworkOptions::default()
        };
        let peer_ids: Vec<Identity> = membership.identities().filter(|i| i.role == Role::Peer).cloned().collect();
        let net = Network::new(membership, options);
        for id in peer_ids {
            let key = wallet.get(&id.identity_id).ok_or_else(|| NetworkError::NoSigningKey(id.identity_id.clone()))?;
            net.add_peer(id, key.clone())?;
        }
        for spec in &topology.channels {
            net.create_channel(spec.to_config())?;
        }
        // Channels created or extended at runtime by an earlier run.
        for config in net.saved_channels()? {
            match net.channel(&config.name) {
                Ok(ch) => {
                    let have = ch.config().chaincodes;
                    for cc in config.chaincodes.difference(&have) {
                        net.deploy_chaincode(&config.name, cc)?;
                    }
                }
                Err(_) => {
                    net.create_channel(config)?;
                }
            }
        }
        Ok((net, wallet))
    }

    pub fn options(&self) -> &NetworkOptions {
        &self.options
    }

    pub fn membership(&self) -> RwLockReadGuard<'_, Membership> {
        self.membership.read()
    }

    /// Enrolls a new identity at runtime.
    pub fn enroll(
        &self,
        org_id: &str,
        role: Role,
        name: &str,
        subject: Option<String>,
    ) -> Result<(Identity, SigningKey), NetworkError> {
        let mut m = self.membership.write();
        let org = m.org(org_id).cloned().ok_or_else(|| NetworkError::UnknownOrg(org_id.to_string()))?;
        let out = m.enroll_with_rng(&org, role, name, subject, &mut rand::rngs::OsRng)?;
        if let Some(dir) = &self.options.data_dir {
            let mut w = Wallet::new();
            w.insert(out.1.clone());
            w.save(&dir.join("wallet"))?;
            std::fs::write(dir.join("membership.json"), serde_json::to_vec_pretty(&m.export())?)?;
        }
        Ok(out)
    }

    /// Registers a peer node. It joins no channel until asked.
    pub fn add_peer(&self, identity: Identity, key: SigningKey) -> Result<Arc<Peer>, NetworkError> {
        if identity.role != Role::Peer {
            return Err(NetworkError::Config(format!("{} is not a peer identity", identity.identity_id)));
        }
        let storage = self.options.data_dir.as_ref().map(|d| d.join("peers").join(&identity.identity_id));
        let peer = Arc::new(Peer::new(identity, key, storage));
        self.peers.write().insert(peer.peer_id().to_string(), peer.clone());
        Ok(peer)
    }

    /// Enrolls a fresh peer identity for `org_id` and registers it.
    pub fn new_peer(&self, org_id: &str) -> Result<Arc<Peer>, NetworkError> {
        let (identity, key) = self.enroll(org_id, Role::Peer, "peer", None)?;
        self.add_peer(identity, key)
    }

    pub fn peer(&self, peer_id: &str) -> Option<Arc<Peer>> {
        self.peers.read().get(peer_id).cloned()
    }

    pub fn peers(&self) -> Vec<Arc<Peer>> {
        self.peers.read().values().cloned().collect()
    }

    pub fn channel(&self, name: &str) -> Result<Arc<Channel>, NetworkError> {
        self.channels.read().get(name).cloned().ok_or_else(|| NetworkError::UnknownChannel(name.to_string()))
    }

    pub fn channels(&self) -> Vec<Arc<Channel>> {
        self.channels.read().values().cloned().collect()
    }

    /// Creates a channel: every peer of a member org joins it, the genesis
    /// block is committed, an ordering service is started and the commit
    /// pipeline begins.
    pub fn create_channel(&self, config: ChannelConfig) -> Result<Arc<Channel>, NetworkError> {
        config.validate(&self.membership.read())?;
        let mut channels = self.channels.write();
        if channels.contains_key(&config.name) {
            return Err(NetworkError::ChannelExists(config.name));
        }
        let chaincodes = config
            .chaincodes
            .iter()
            .map(|n| builtin_chaincode(n).ok_or_else(|| NetworkError::UnknownChaincode(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let peers: Vec<Arc<Peer>> =
            self.peers.read().values().filter(|p| config.member_orgs.contains(p.org_id())).cloned().collect();
        let channel = Channel::start(config, peers, chaincodes, self.membership.clone(), &self.options)?;
        channels.insert(channel.name().to_string(), channel.clone());
        self.save_channel(&channel)?;
        Ok(channel)
    }

    fn save_channel(&self, channel: &Channel) -> Result<(), NetworkError> {
        if let Some(dir) = &self.options.data_dir {
            let dir = dir.join("channels");
            std::fs::create_dir_all(&dir)?;
            let config = channel.config();
            std::fs::write(dir.join(format!("{}.json", config.name)), serde_json::to_vec_pretty(&config)?)?;
        }
        Ok(())
    }

    fn saved_channels(&self) -> Result<Vec<ChannelConfig>, NetworkError> {
        let Some(dir) = &self.options.data_dir else { return Ok(vec![]) };
        let dir = dir.join("channels");
        if !dir.exists() {
            return Ok(vec![]);
        }
        let mut paths: Vec<_> = std::fs::read_dir(&dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        paths.iter().map(|p| Ok(serde_json::from_slice(&std::fs::read(p)?)?)).collect()
    }

    /// Joins a peer to an existing channel, replaying the chain from block 0.
    pub fn join_channel(&self, peer_id: &str, channel: &str) -> Result<(), NetworkError> {
        let peer = self.peer(peer_id).ok_or_else(|| NetworkError::UnknownPeer(peer_id.to_string()))?;
        self.channel(channel)?.join(peer)
    }

    /// Installs a built-in chaincode on every peer of a channel.
    pub fn deploy_chaincode(&self, channel: &str, name: &str) -> Result<(), NetworkError> {
        let cc = builtin_chaincode(name).ok_or_else(|| NetworkError::UnknownChaincode(name.to_string()))?;
        let ch = self.channel(channel)?;
        ch.install(cc);
        self.save_channel(&ch)
    }

    pub fn new_proposal(&self, channel: &str, chaincode: &str, method: &str, args: Vec<String>, submitter: &str) -> Proposal {
        let nonce: [u8; 16] = rand::random();
        let mut seed = nonce.to_vec();
        seed.extend_from_slice(submitter.as_bytes());
        Proposal {
            tx_id: Hash32::digest(&seed).to_hex(),
            channel: channel.to_string(),
            chaincode: chaincode.to_string(),
            method: method.to_string(),
            args,
            submitter: submitter.to_string(),
            timestamp_ms: now_ms(),
        }
    }

    /// One peer from each org of a minimal policy-satisfying org set,
    /// rotating among an org's peers.
    pub fn endorsers_for(&self, channel: &str, submitter: &str) -> Result<Vec<Arc<Peer>>, NetworkError> {
        let ch = self.channel(channel)?;
        let submitter_org = self
            .membership
            .read()
            .identity(submitter)
            .map(|i| i.org_id.clone())
            .ok_or_else(|| NetworkError::UnknownIdentity(submitter.to_string()))?;
        let peers = ch.peers();
        let available: BTreeSet<OrgId> = peers.iter().map(|p| p.org_id().to_string()).collect();
        let plan = ch
            .config()
            .endorsement_policy
            .endorsement_plan(&available, &submitter_org)
            .ok_or_else(|| NetworkError::NoEndorsers(format!("{} for submitter org {submitter_org}", ch.config().endorsement_policy)))?;
        let turn = self.round_robin.fetch_add(1, Ordering::Relaxed);
        Ok(plan
            .iter()
            .map(|org| {
                let mine: Vec<&Arc<Peer>> = peers.iter().filter(|p| p.org_id() == org).collect();
                mine[turn % mine.len()].clone()
            })
            .collect())
    }

    /// Endorses on the peers the policy asks for. When no such set exists the
    /// proposal still runs on one peer, so a chaincode rejection (an
    /// unauthorized caller, say) is reported ahead of `NoEndorsers`.
    pub fn endorse_proposal(&self, proposal: &Proposal) -> Result<Vec<ProposalResponse>, NetworkError> {
        match self.endorsers_for(&proposal.channel, &proposal.submitter) {
            Ok(peers) => self.endorse(proposal, &peers),
            Err(NetworkError::NoEndorsers(why)) => {
                if let Some(peer) = self.channel(&proposal.channel)?.peers().first() {
                    peer.endorse(proposal, &self.membership.read())?;
                }
                Err(NetworkError::NoEndorsers(why))
            }
            Err(e) => Err(e),
        }
    }

    pub fn endorse(&self, proposal: &Proposal, peers: &[Arc<Peer>]) -> Result<Vec<ProposalResponse>, NetworkError> {
        let m = self.membership.read();
        peers.iter().map(|p| p.endorse(proposal, &m)).collect()
    }

    /// Byte-compares the responses, then builds and client-signs the
    /// transaction.
    pub fn assemble(
        proposal: &Proposal,
        responses: &[ProposalResponse],
        key: &SigningKey,
    ) -> Result<Transaction, NetworkError> {
        let first = responses.first().ok_or_else(|| NetworkError::EndorsementMismatch("no responses".into()))?;
        let digest = proposal.digest();
        let reference = first.endorsed_bytes();
        for r in responses {
            if r.proposal_digest != digest {
                return Err(NetworkError::EndorsementMismatch(format!("{} endorsed a different proposal", r.peer_id)));
            }
            if r.endorsed_bytes() != reference || r.payload != first.payload {
                return Err(NetworkError::EndorsementMismatch(format!(
                    "{} and {} returned different results",
                    first.peer_id, r.peer_id
                )));
            }
        }
        if key.identity_id() != proposal.submitter {
            return Err(NetworkError::NoSigningKey(proposal.submitter.clone()));
        }
        let mut tx = Transaction {
            tx_id: proposal.tx_id.clone(),
            channel: proposal.channel.clone(),
            chaincode_id: proposal.chaincode.clone(),
            method: proposal.method.clone(),
            args: proposal.args.clone(),
            rwset: first.rwset.clone(),
            event: first.event.clone(),
            endorsements: responses
                .iter()
                .map(|r| Endorsement { org_id: r.org_id.clone(), signature: r.signature.clone() })
                .collect(),
            submitter: proposal.submitter.clone(),
            timestamp_ms: proposal.timestamp_ms,
            client_signature: crate::identity::Signature { signer: proposal.submitter.clone(), bytes: vec![] },
        };
        tx.client_signature = key.sign(&tx.signing_bytes());
        Ok(tx)
    }

    /// Sends a transaction to ordering. The receiver yields its commit event.
    pub fn submit(&self, tx: Transaction) -> Result<crossbeam_channel::Receiver<CommitEvent>, NetworkError> {
        self.channel(&tx.channel)?.submit(tx)
    }

    /// Full flow: endorse on policy-required peers, submit, await commit.
    pub fn invoke(
        &self,
        channel: &str,
        chaincode: &str,
        method: &str,
        args: Vec<String>,
        key: &SigningKey,
    ) -> Result<CommitReceipt, NetworkError> {
        let proposal = self.new_proposal(channel, chaincode, method, args, key.identity_id());
        let responses = self.endorse_proposal(&proposal)?;
        let payload = responses[0].payload.clone();
        let tx = Self::assemble(&proposal, &responses, key)?;
        let rx = self.submit(tx)?;
        self.await_commit(channel, &proposal.tx_id, &rx, payload)
    }

    pub fn await_commit(
        &self,
        channel: &str,
        tx_id: &str,
        rx: &crossbeam_channel::Receiver<CommitEvent>,
        payload: Vec<u8>,
    ) -> Result<CommitReceipt, NetworkError> {
        match rx.recv_timeout(self.options.commit_timeout) {
            Ok(ev) => Ok(CommitReceipt {
                tx_id: ev.tx_id,
                block_number: ev.block_number,
                block_timestamp_ms: ev.block_timestamp_ms,
                flag: ev.flag,
                payload,
                event: ev.chaincode_event,
            }),
            Err(_) => {
                let ch = self.channel(channel)?;
                if let Some(reason) = ch.halted() {
                    return Err(NetworkError::Halted(reason));
                }
                Err(NetworkError::CommitTimeout { tx_id: tx_id.to_string() })
            }
        }
    }

    /// Query path: simulate on one peer, nothing is ordered. Prefers a peer
    /// of the caller's own org.
    pub fn query(
        &self,
        channel: &str,
        chaincode: &str,
        method: &str,
        args: Vec<String>,
        identity_id: &str,
    ) -> Result<Vec<u8>, NetworkError> {
        let ch = self.channel(channel)?;
        let org = self.membership.read().identity(identity_id).map(|i| i.org_id.clone());
        let peers = ch.peers();
        if peers.is_empty() {
            return Err(NetworkError::NoEndorsers(format!("channel {channel} has no peers")));
        }
        let own: Vec<&Arc<Peer>> = peers.iter().filter(|p| Some(p.org_id()) == org.as_deref()).collect();
        let turn = self.round_robin.fetch_add(1, Ordering::Relaxed);
        let peer = if own.is_empty() { &peers[turn % peers.len()] } else { own[turn % own.len()] };
        let proposal = self.new_proposal(channel, chaincode, method, args, identity_id);
        Ok(peer.endorse(&proposal, &self.membership.read())?.payload)
    }

    /// Stops every channel's pipeline and ordering service.
    pub fn shutdown(&self) {
        for ch in self.channels.read().values() {
            ch.shutdown();
        }
    }
}

impl Drop for Network {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Registers the topology's orgs, one peer identity per configured peer,
/// and its users.
fn enroll_topology(topology: &Topology) -> Result<(Membership, Wallet), NetworkError> {
    let mut m = Membership::new();
    let mut wallet = Wallet::new();
    for org in &topology.orgs {
        let name = if org.name.is_empty() { org.id.as_str() } else { org.name.as_str() };
        m.register_org_with_id(&org.id, name, org.kind)?;
    }
    for org in &topology.orgs {
        let o = m.org(&org.id).cloned().expect("registered above");
        for _ in 0..org.peers {
            let (_, key) = m.enroll_identity(&o, Role::Peer, "peer")?;
            wallet.insert(key);
        }
    }
    for user in &topology.users {
        let o = m.org(&user.org).cloned().ok_or_else(|| NetworkError::UnknownOrg(user.org.clone()))?;
        let (_, key) = m.enroll_with_rng(&o, user.role, &user.name, user.subject.clone(), &mut rand::rngs::OsRng)?;
        wallet.insert(key);
    }
    Ok((m, wallet))
}
