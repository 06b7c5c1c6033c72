use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{KvWrite, StateVersion};
use super::LedgerError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionedValue {
    pub key: String,
    #[serde(with = "crate::identity::hex_bytes")]
    pub value: Vec<u8>,
    pub version: StateVersion,
    pub deleted: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct WalRecord {
    block: u64,
    writes: Vec<(u64, KvWrite)>,
}

/// Current value of every key, tagged with the version that wrote it.
#[derive(Debug, Default)]
pub struct WorldState {
    entries: BTreeMap<String, VersionedValue>,
    /// Number of blocks whose writes have been applied.
    applied_height: u64,
    wal: Option<BufWriter<File>>,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens a write-ahead log, replaying whatever it already holds.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let path = path.as_ref();
        let mut state = WorldState::new();
        if path.exists() {
            let mut reader = BufReader::new(File::open(path)?);
            loop {
                let mut len = [0u8; 4];
                match reader.read_exact(&mut len) {
                    Ok(()) => {}
                    Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                    Err(e) => return Err(e.into()),
                }
                let mut buf = vec![0u8; u32::from_be_bytes(len) as usize];
                if reader.read_exact(&mut buf).is_err() {
                    // torn tail write; the block store replay will redo it
                    break;
                }
                let record: WalRecord = serde_json::from_slice(&buf)?;
                state.apply_in_memory(record.block, &record.writes);
            }
        }
        state.wal = Some(BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?));
        Ok(state)
    }

    pub fn applied_height(&self) -> u64 {
        self.applied_height
    }

    /// Live value; tombstoned or never-written keys read as absent.
    pub fn get(&self, key: &str) -> Option<&[u8]> {
        self.entries.get(key).filter(|v| !v.deleted).map(|v| v.value.as_slice())
    }

    /// Version of the live value, `None` when absent or tombstoned.
    pub fn version(&self, key: &str) -> Option<StateVersion> {
        self.entries.get(key).filter(|v| !v.deleted).map(|v| v.version)
    }

    pub fn entry(&self, key: &str) -> Option<&VersionedValue> {
        self.entries.get(key)
    }

    pub fn scan_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a VersionedValue> + 'a {
        self.entries
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v)
            .filter(|v| !v.deleted)
    }

    pub fn len_live(&self) -> usize {
        self.entries.values().filter(|v| !v.deleted).count()
    }

    /// Applies every valid write of one block, logging it first when a WAL
    /// is attached.
    pub fn apply_block(&mut self, block: u64, writes: Vec<(u64, KvWrite)>) -> Result<(), LedgerError> {
        if let Some(wal) = self.wal.as_mut() {
            let bytes = serde_json::to_vec(&WalRecord { block, writes: writes.clone() })?;
            wal.write_all(&(bytes.len() as u32).to_be_bytes())?;
            wal.write_all(&bytes)?;
            wal.flush()?;
            wal.get_ref().sync_data()?;
        }
        self.apply_in_memory(block, &writes);
        Ok(())
    }

    fn apply_in_memory(&mut self, block: u64, writes: &[(u64, KvWrite)]) {
        for (tx_index, w) in writes {
            let version = StateVersion::new(block, *tx_index);
            let entry = VersionedValue {
                key: w.key.clone(),
                value: w.value.clone().unwrap_or_default(),
                version,
                deleted: w.value.is_none(),
            };
            self.entries.insert(w.key.clone(), entry);
        }
        self.applied_height = self.applied_height.max(block + 1);
    }

    /// Replaces a value without a version bump or log record. Exists so
    /// tests and drills can simulate a compromised peer.
    #[doc(hidden)]
    pub fn overwrite_unchecked(&mut self, key: &str, value: Vec<u8>) {
        if let Some(entry) = self.entries.get_mut(key) {
            entry.value = value;
        }
    }

    /// Canonical JSON dump: keys sorted, no whitespace. UTF-8 values are
    /// emitted as strings, anything else as `hex:`-prefixed strings.
    pub fn export(&self) -> Vec<u8> {
        let mut map = serde_json::Map::new();
        for (key, v) in &self.entries {
            let value = match std::str::from_utf8(&v.value) {
                Ok(s) => s.to_string(),
                Err(_) => format!("hex:{}", hex::encode(&v.value)),
            };
            map.insert(
                key.clone(),
                serde_json::json!({
                    "deleted": v.deleted,
                    "value": value,
                    "version": [v.version.block_number, v.version.tx_index],
                }),
            );
        }
        serde_json::to_vec(&serde_json::Value::Object(map)).expect("export serializes")
    }
}
