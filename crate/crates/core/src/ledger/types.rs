use std::fmt;

use serde::{Deserialize, Serialize};

use crate::identity::{hex_bytes, IdentityId, OrgId, Signature};

/// Position of a committed write: `(block, tx index)`. `(0, 0)` is reserved
/// for genesis-installed values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateVersion {
    pub block_number: u64,
    pub tx_index: u64,
}

impl StateVersion {
    pub const GENESIS: StateVersion = StateVersion { block_number: 0, tx_index: 0 };

    pub fn new(block_number: u64, tx_index: u64) -> Self {
        StateVersion { block_number, tx_index }
    }
}

impl fmt::Display for StateVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.block_number, self.tx_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvRead {
    pub key: String,
    pub version: Option<StateVersion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvWrite {
    pub key: String,
    /// `None` is a delete.
    #[serde(with = "opt_hex")]
    pub value: Option<Vec<u8>>,
}

impl KvWrite {
    pub fn is_delete(&self) -> bool {
        self.value.is_none()
    }
}

/// A prefix scan observed during simulation, with every live key/version it
/// returned. Re-executed at commit to detect phantoms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeRead {
    pub prefix: String,
    pub results: Vec<KvRead>,
}

/// Simulation output of one proposal. Keys are unique and sorted within
/// `reads` and `writes`, so the canonical encoding is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadWriteSet {
    pub reads: Vec<KvRead>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub range_reads: Vec<RangeRead>,
    pub writes: Vec<KvWrite>,
}

impl ReadWriteSet {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("rwset serializes")
    }

    pub fn is_read_only(&self) -> bool {
        self.writes.is_empty()
    }
}

/// Event raised by chaincode during simulation and published on commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChaincodeEvent {
    pub name: String,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endorsement {
    pub org_id: OrgId,
    pub signature: Signature,
}

/// Bytes every endorser signs: the rwset plus the chaincode event.
pub fn endorsed_bytes(rwset: &ReadWriteSet, event: Option<&ChaincodeEvent>) -> Vec<u8> {
    #[derive(Serialize)]
    struct Endorsed<'a> {
        rwset: &'a ReadWriteSet,
        event: Option<&'a ChaincodeEvent>,
    }
    serde_json::to_vec(&Endorsed { rwset, event }).expect("endorsed payload serializes")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: String,
    pub channel: String,
    pub chaincode_id: String,
    pub method: String,
    pub args: Vec<String>,
    pub rwset: ReadWriteSet,
    pub event: Option<ChaincodeEvent>,
    pub endorsements: Vec<Endorsement>,
    pub submitter: IdentityId,
    /// Client clock in ms since the epoch; informational only.
    pub timestamp_ms: u64,
    pub client_signature: Signature,
}

impl Transaction {
    pub fn endorsed_bytes(&self) -> Vec<u8> {
        endorsed_bytes(&self.rwset, self.event.as_ref())
    }

    /// Everything except the client signature, in canonical form.
    pub fn signing_bytes(&self) -> Vec<u8> {
        #[derive(Serialize)]
        struct Unsigned<'a> {
            tx_id: &'a str,
            channel: &'a str,
            chaincode_id: &'a str,
            method: &'a str,
            args: &'a [String],
            rwset: &'a ReadWriteSet,
            event: Option<&'a ChaincodeEvent>,
            endorsements: &'a [Endorsement],
            submitter: &'a str,
            timestamp_ms: u64,
        }
        serde_json::to_vec(&Unsigned {
            tx_id: &self.tx_id,
            channel: &self.channel,
            chaincode_id: &self.chaincode_id,
            method: &self.method,
            args: &self.args,
            rwset: &self.rwset,
            event: self.event.as_ref(),
            endorsements: &self.endorsements,
            submitter: &self.submitter,
            timestamp_ms: self.timestamp_ms,
        })
        .expect("transaction serializes")
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("transaction serializes")
    }

    /// Rough wire size, used for batch cutting.
    pub fn encoded_len(&self) -> usize {
        self.canonical_bytes().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValidationCode {
    Valid,
    #[serde(rename = "MVCCConflict")]
    MvccConflict,
    PolicyFailure,
    BadSignature,
}

impl ValidationCode {
    pub fn is_valid(self) -> bool {
        self == ValidationCode::Valid
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ValidationCode::Valid => "Valid",
            ValidationCode::MvccConflict => "MVCCConflict",
            ValidationCode::PolicyFailure => "PolicyFailure",
            ValidationCode::BadSignature => "BadSignature",
        }
    }
}

impl fmt::Display for ValidationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

mod opt_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(bytes) => s.serialize_some(&hex::encode(bytes)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|s| hex::decode(s).map_err(serde::de::Error::custom))
            .transpose()
    }
}
