use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::NetworkError;
use crate::chaincode::{simulate, Chaincode};
use crate::identity::{Identity, IdentityId, Membership, OrgId, Signature, SigningKey};
use crate::ledger::{endorsed_bytes, ChaincodeEvent, Hash32, Ledger, ReadWriteSet};

/// A client's request to run a chaincode method.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub tx_id: String,
    pub channel: String,
    pub chaincode: String,
    pub method: String,
    pub args: Vec<String>,
    pub submitter: IdentityId,
    pub timestamp_ms: u64,
}

impl Proposal {
    pub fn digest(&self) -> Hash32 {
        Hash32::digest(&serde_json::to_vec(self).expect("serializable"))
    }
}

/// A peer's signed simulation result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposalResponse {
    pub proposal_digest: Hash32,
    pub peer_id: String,
    pub org_id: OrgId,
    pub payload: Vec<u8>,
    pub rwset: ReadWriteSet,
    pub event: Option<ChaincodeEvent>,
    /// Over `endorsed_bytes(rwset, event)`.
    pub signature: Signature,
}

impl ProposalResponse {
    pub fn endorsed_bytes(&self) -> Vec<u8> {
        endorsed_bytes(&self.rwset, self.event.as_ref())
    }
}

/// A peer's replica of one channel: its ledger and installed chaincodes.
pub struct PeerChannel {
    pub(crate) ledger: RwLock<Ledger>,
    chaincodes: RwLock<BTreeMap<String, Arc<dyn Chaincode>>>,
}

impl PeerChannel {
    pub fn ledger(&self) -> &RwLock<Ledger> {
        &self.ledger
    }

    pub fn chaincode(&self, name: &str) -> Option<Arc<dyn Chaincode>> {
        self.chaincodes.read().get(name).cloned()
    }

    pub fn install(&self, chaincode: Arc<dyn Chaincode>) {
        self.chaincodes.write().insert(chaincode.name().to_string(), chaincode);
    }

    pub fn installed(&self) -> Vec<String> {
        self.chaincodes.read().keys().cloned().collect()
    }
}

/// Endorsing and committing node owned by one org.
pub struct Peer {
    peer_id: String,
    identity: Identity,
    key: SigningKey,
    storage: Option<PathBuf>,
    channels: RwLock<BTreeMap<String, Arc<PeerChannel>>>,
}

impl Peer {
    /// `storage` is the directory holding one ledger per joined channel;
    /// `None` keeps everything in memory.
    pub fn new(identity: Identity, key: SigningKey, storage: Option<PathBuf>) -> Self {
        Peer { peer_id: identity.identity_id.clone(), identity, key, storage, channels: RwLock::new(BTreeMap::new()) }
    }

    pub fn peer_id(&self) -> &str {
        &self.peer_id
    }

    pub fn org_id(&self) -> &str {
        &self.identity.org_id
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn storage(&self) -> Option<&PathBuf> {
        self.storage.as_ref()
    }

    /// Opens (or creates) this peer's ledger for `channel`.
    pub(crate) fn open_channel(&self, channel: &str) -> Result<Arc<PeerChannel>, NetworkError> {
        if let Some(c) = self.channels.read().get(channel) {
            return Ok(c.clone());
        }
        let ledger = match &self.storage {
            Some(dir) => Ledger::open(dir.join(channel))?,
            None => Ledger::in_memory(),
        };
        let pc = Arc::new(PeerChannel { ledger: RwLock::new(ledger), chaincodes: RwLock::new(BTreeMap::new()) });
        self.channels.write().insert(channel.to_string(), pc.clone());
        Ok(pc)
    }

    pub fn channel(&self, channel: &str) -> Option<Arc<PeerChannel>> {
        self.channels.read().get(channel).cloned()
    }

    pub fn joined_channels(&self) -> Vec<String> {
        self.channels.read().keys().cloned().collect()
    }

    /// Simulates `proposal` on this peer's committed state and signs the
    /// result. Never mutates state.
    pub fn endorse(&self, proposal: &Proposal, membership: &Membership) -> Result<ProposalResponse, NetworkError> {
        let pc = self
            .channel(&proposal.channel)
            .ok_or_else(|| NetworkError::NotJoined { peer: self.peer_id.clone(), channel: proposal.channel.clone() })?;
        let cc = pc.chaincode(&proposal.chaincode).ok_or_else(|| NetworkError::ChaincodeNotInstalled {
            peer: self.peer_id.clone(),
            chaincode: proposal.chaincode.clone(),
        })?;
        let caller = membership
            .identity(&proposal.submitter)
            .ok_or_else(|| NetworkError::UnknownIdentity(proposal.submitter.clone()))?;
        let sim = {
            let ledger = pc.ledger.read();
            simulate(cc.as_ref(), ledger.state(), membership, caller, &proposal.method, &proposal.args)?
        };
        let signature = self.key.sign(&endorsed_bytes(&sim.rwset, sim.event.as_ref()));
        Ok(ProposalResponse {
            proposal_digest: proposal.digest(),
            peer_id: self.peer_id.clone(),
            org_id: self.identity.org_id.clone(),
            payload: sim.payload,
            rwset: sim.rwset,
            event: sim.event,
            signature,
        })
    }
}
