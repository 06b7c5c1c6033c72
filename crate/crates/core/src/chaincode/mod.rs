//! In-process chaincode runtime. A method runs against a read-only view of
//! world state; every access goes through [`TxContext`], which records the
//! read-write set that endorsement signs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{Action, Decision, Identity, Membership, Resource};
use crate::ledger::{ChaincodeEvent, KvRead, KvWrite, RangeRead, ReadWriteSet, WorldState};

/// Failure of a chaincode method. The kind is stable and machine-readable;
/// the access layer maps it to HTTP status codes.
#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[error("{kind:?}: {message}")]
pub struct ChaincodeError {
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorKind {
    Unauthorized,
    NotFound,
    #[serde(rename = "DuplicateID")]
    DuplicateId,
    ValidationError,
    MatchedRecordLocked,
    AlreadyMatched,
    NotAMatch,
    UnknownMethod,
    BadArguments,
}

impl ErrorKind {
    /// Wire name, as serialized.
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Unauthorized => "Unauthorized",
            ErrorKind::NotFound => "NotFound",
            ErrorKind::DuplicateId => "DuplicateID",
            ErrorKind::ValidationError => "ValidationError",
            ErrorKind::MatchedRecordLocked => "MatchedRecordLocked",
            ErrorKind::AlreadyMatched => "AlreadyMatched",
            ErrorKind::NotAMatch => "NotAMatch",
            ErrorKind::UnknownMethod => "UnknownMethod",
            ErrorKind::BadArguments => "BadArguments",
        }
    }
}

impl ChaincodeError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        ChaincodeError { kind, message: message.into() }
    }
}

pub trait Chaincode: Send + Sync {
    fn name(&self) -> &str;

    /// Runs `method`. Returns the response payload; state effects are only
    /// what `ctx` recorded.
    fn invoke(&self, ctx: &mut TxContext<'_>, method: &str, args: &[String]) -> Result<Vec<u8>, ChaincodeError>;
}

/// Per-invocation recorder of reads, range reads, writes and the event.
pub struct TxContext<'a> {
    state: &'a WorldState,
    membership: &'a Membership,
    caller: &'a Identity,
    reads: BTreeMap<String, KvRead>,
    range_reads: Vec<RangeRead>,
    writes: BTreeMap<String, Option<Vec<u8>>>,
    event: Option<ChaincodeEvent>,
}

impl<'a> TxContext<'a> {
    pub fn new(state: &'a WorldState, membership: &'a Membership, caller: &'a Identity) -> Self {
        TxContext {
            state,
            membership,
            caller,
            reads: BTreeMap::new(),
            range_reads: Vec::new(),
            writes: BTreeMap::new(),
            event: None,
        }
    }

    pub fn caller(&self) -> &Identity {
        self.caller
    }

    pub fn membership(&self) -> &Membership {
        self.membership
    }

    /// Number of committed blocks reflected in the state being read.
    pub fn snapshot_height(&self) -> u64 {
        self.state.applied_height()
    }

    /// Reads a key, seeing this invocation's own writes first.
    pub fn get_state(&mut self, key: &str) -> Option<Vec<u8>> {
        if let Some(w) = self.writes.get(key) {
            return w.clone();
        }
        let version = self.state.version(key);
        self.reads.entry(key.to_string()).or_insert_with(|| KvRead { key: key.to_string(), version });
        self.state.get(key).map(<[u8]>::to_vec)
    }

    pub fn put_state(&mut self, key: &str, value: Vec<u8>) {
        self.writes.insert(key.to_string(), Some(value));
    }

    pub fn del_state(&mut self, key: &str) {
        self.writes.insert(key.to_string(), None);
    }

    /// Live entries under `prefix`, sorted by key. The scan is recorded so
    /// commit can detect phantoms. Own pending writes are merged in.
    pub fn scan_prefix(&mut self, prefix: &str) -> Vec<(String, Vec<u8>)> {
        let mut seen = Vec::new();
        let mut out: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for v in self.state.scan_prefix(prefix) {
            seen.push(KvRead { key: v.key.clone(), version: Some(v.version) });
            out.insert(v.key.clone(), v.value.clone());
        }
        if !self.range_reads.iter().any(|r| r.prefix == prefix) {
            self.range_reads.push(RangeRead { prefix: prefix.to_string(), results: seen });
        }
        for (k, w) in self.writes.range(prefix.to_string()..) {
            if !k.starts_with(prefix) {
                break;
            }
            match w {
                Some(v) => out.insert(k.clone(), v.clone()),
                None => out.remove(k),
            };
        }
        out.into_iter().collect()
    }

    /// Checks the caller against the authorization matrix.
    pub fn authorize(&self, action: Action, resource: &Resource) -> Result<(), ChaincodeError> {
        match self.membership.authorize(&self.caller.identity_id, action, resource) {
            Ok(Decision::Allow) => Ok(()),
            Ok(Decision::Deny) => Err(ChaincodeError::new(
                ErrorKind::Unauthorized,
                format!("{} may not {action:?}", self.caller.identity_id),
            )),
            Err(e) => Err(ChaincodeError::new(ErrorKind::Unauthorized, e.to_string())),
        }
    }

    pub fn set_event(&mut self, name: &str, payload: Vec<u8>) {
        self.event = Some(ChaincodeEvent { name: name.to_string(), payload });
    }

    /// The recorded read-write set in canonical (key-sorted) order.
    pub fn finish(self) -> (ReadWriteSet, Option<ChaincodeEvent>) {
        let mut range_reads = self.range_reads;
        range_reads.sort_by(|a, b| a.prefix.cmp(&b.prefix));
        let rwset = ReadWriteSet {
            reads: self.reads.into_values().collect(),
            range_reads,
            writes: self.writes.into_iter().map(|(key, value)| KvWrite { key, value }).collect(),
        };
        (rwset, self.event)
    }
}

/// Result of running a proposal: payload, rwset and event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Simulation {
    pub payload: Vec<u8>,
    pub rwset: ReadWriteSet,
    pub event: Option<ChaincodeEvent>,
}

/// Executes `method` on `chaincode` against `state` without mutating it.
pub fn simulate(
    chaincode: &dyn Chaincode,
    state: &WorldState,
    membership: &Membership,
    caller: &Identity,
    method: &str,
    args: &[String],
) -> Result<Simulation, ChaincodeError> {
    let mut ctx = TxContext::new(state, membership, caller);
    let payload = chaincode.invoke(&mut ctx, method, args)?;
    let (rwset, event) = ctx.finish();
    Ok(Simulation { payload, rwset, event })
}
