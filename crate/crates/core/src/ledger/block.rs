use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::types::{Transaction, ValidationCode};

/// SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Hash32(pub [u8; 32]);

impl Hash32 {
    pub const ZERO: Hash32 = Hash32([0u8; 32]);

    pub fn digest(bytes: &[u8]) -> Hash32 {
        Hash32(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.to_hex()[..12])
    }
}

impl fmt::Display for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Hash32 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash32 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Hash32(arr))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHeader {
    pub number: u64,
    pub prev_hash: Hash32,
    pub data_hash: Hash32,
}

impl BlockHeader {
    /// Fixed 72-byte layout: number (8 bytes BE) || prev_hash || data_hash.
    pub fn encode(&self) -> [u8; 72] {
        let mut out = [0u8; 72];
        out[..8].copy_from_slice(&self.number.to_be_bytes());
        out[8..40].copy_from_slice(&self.prev_hash.0);
        out[40..].copy_from_slice(&self.data_hash.0);
        out
    }
}

pub fn compute_block_hash(header: &BlockHeader) -> Hash32 {
    Hash32::digest(&header.encode())
}

/// Digest over the transaction list: SHA-256 of each transaction's canonical
/// encoding, length-prefixed (u32 BE) and concatenated in block order.
pub fn compute_data_hash(transactions: &[Transaction]) -> Hash32 {
    let mut hasher = Sha256::new();
    for tx in transactions {
        let bytes = tx.canonical_bytes();
        hasher.update((bytes.len() as u32).to_be_bytes());
        hasher.update(&bytes);
    }
    Hash32(hasher.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub number: u64,
    pub prev_hash: Hash32,
    pub data_hash: Hash32,
    /// Orderer clock at cut time, ms since the epoch. Not part of the header hash.
    pub timestamp_ms: u64,
    pub transactions: Vec<Transaction>,
    /// Filled in at commit; empty until then.
    #[serde(default)]
    pub validation_flags: Vec<ValidationCode>,
}

impl Block {
    pub fn new(number: u64, prev_hash: Hash32, timestamp_ms: u64, transactions: Vec<Transaction>) -> Block {
        let data_hash = compute_data_hash(&transactions);
        Block { number, prev_hash, data_hash, timestamp_ms, transactions, validation_flags: Vec::new() }
    }

    pub fn header(&self) -> BlockHeader {
        BlockHeader { number: self.number, prev_hash: self.prev_hash, data_hash: self.data_hash }
    }

    pub fn hash(&self) -> Hash32 {
        compute_block_hash(&self.header())
    }
}
