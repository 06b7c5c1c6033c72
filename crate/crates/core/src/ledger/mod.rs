//! Per-channel ledger: a hash-chained block store plus a versioned world
//! state, with read-set (MVCC) validation at commit.

mod block;
mod state;
mod store;
mod types;

use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

pub use block::{compute_block_hash, compute_data_hash, Block, BlockHeader, Hash32};
pub use state::{VersionedValue, WorldState};
pub use store::{read_records, verify_blocks, write_records, BlockStore, ChainStatus};
pub use types::{
    endorsed_bytes, ChaincodeEvent, Endorsement, KvRead, KvWrite, RangeRead, ReadWriteSet, StateVersion, Transaction,
    ValidationCode,
};

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("chain gap: expected block {expected}, got {got}")]
    ChainGap { expected: u64, got: u64 },
    #[error("prev_hash of block {number} does not match the current tip")]
    HashMismatch { number: u64 },
    #[error("{flags} endorsement flags for {txs} transactions")]
    FlagCount { flags: usize, txs: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding: {0}")]
    Encoding(#[from] serde_json::Error),
}

/// Signature and endorsement-policy check applied to each transaction before
/// MVCC validation. Returns `Valid` or the failure flag.
pub trait EndorsementCheck {
    fn check(&self, tx: &Transaction) -> ValidationCode;
}

/// Accepts everything. For ledger-only tests and tooling replays.
pub struct AcceptAll;

impl EndorsementCheck for AcceptAll {
    fn check(&self, _tx: &Transaction) -> ValidationCode {
        ValidationCode::Valid
    }
}

/// `Valid` iff every read version still matches the committed state and no
/// read key (or scanned prefix) was written by an earlier valid transaction
/// of the same block. `state` holds the blocks before the current one.
pub fn mvcc_validate(state: &WorldState, tx: &Transaction, earlier_writes: &HashSet<String>) -> ValidationCode {
    for read in &tx.rwset.reads {
        if earlier_writes.contains(&read.key) || state.version(&read.key) != read.version {
            return ValidationCode::MvccConflict;
        }
    }
    for range in &tx.rwset.range_reads {
        if earlier_writes.iter().any(|k| k.starts_with(&range.prefix)) {
            return ValidationCode::MvccConflict;
        }
        let mut current = state.scan_prefix(&range.prefix);
        for seen in &range.results {
            match current.next() {
                Some(v) if v.key == seen.key && Some(v.version) == seen.version => {}
                _ => return ValidationCode::MvccConflict,
            }
        }
        if current.next().is_some() {
            return ValidationCode::MvccConflict;
        }
    }
    ValidationCode::Valid
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEntry {
    pub tx_id: String,
    pub block_number: u64,
    pub tx_index: u64,
    pub timestamp_ms: u64,
    /// `None` for a delete.
    pub value: Option<Vec<u8>>,
}

#[derive(Debug)]
pub struct Ledger {
    store: BlockStore,
    state: WorldState,
}

impl Default for Ledger {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Ledger {
    pub fn in_memory() -> Self {
        Ledger { store: BlockStore::in_memory(), state: WorldState::new() }
    }

    /// Opens a ledger directory (`blocks.bin` + `state.wal`), replaying any
    /// committed blocks the state log has not caught up with.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let store = BlockStore::open(dir.join("blocks.bin"))?;
        let mut state = WorldState::open(dir.join("state.wal"))?;
        for block in &store.blocks()[state.applied_height() as usize..] {
            state.apply_block(block.number, valid_writes(block))?;
        }
        Ok(Ledger { store, state })
    }

    pub fn height(&self) -> u64 {
        self.store.height()
    }

    pub fn tip_hash(&self) -> Hash32 {
        self.store.tip_hash()
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    #[doc(hidden)]
    pub fn state_mut(&mut self) -> &mut WorldState {
        &mut self.state
    }

    pub fn get_state(&self, key: &str) -> Option<&[u8]> {
        self.state.get(key)
    }

    pub fn verify_chain(&self) -> ChainStatus {
        self.store.verify_chain()
    }

    /// Validates and appends `block`, applying the writes of its valid
    /// transactions at version `(block.number, tx_index)`. Block 0 is the
    /// channel's config block and is accepted without validation.
    pub fn commit_block(
        &mut self,
        block: Block,
        check: &dyn EndorsementCheck,
    ) -> Result<Vec<ValidationCode>, LedgerError> {
        let checked = check_endorsements(&block, check);
        self.commit_checked(block, checked)
    }

    /// Second half of [`Ledger::commit_block`]: `checked` holds the
    /// endorsement flags from [`check_endorsements`] for this block.
    pub fn commit_checked(
        &mut self,
        mut block: Block,
        checked: Vec<ValidationCode>,
    ) -> Result<Vec<ValidationCode>, LedgerError> {
        self.store.check_append(&block)?;
        if checked.len() != block.transactions.len() {
            return Err(LedgerError::FlagCount { flags: checked.len(), txs: block.transactions.len() });
        }
        let mut flags = Vec::with_capacity(block.transactions.len());
        let mut written: HashSet<String> = HashSet::new();
        for (tx, mut flag) in block.transactions.iter().zip(checked) {
            if flag.is_valid() && block.number != 0 {
                flag = mvcc_validate(&self.state, tx, &written);
            }
            if flag.is_valid() {
                written.extend(tx.rwset.writes.iter().map(|w| w.key.clone()));
            }
            flags.push(flag);
        }
        block.validation_flags = flags.clone();
        let writes = valid_writes(&block);
        let number = block.number;
        self.store.append_block(block)?;
        self.state.apply_block(number, writes)?;
        Ok(flags)
    }

    /// Every valid write to `key`, in chain order.
    pub fn get_history(&self, key: &str) -> Vec<HistoryEntry> {
        let mut out = Vec::new();
        for block in self.store.blocks() {
            for (i, tx) in block.transactions.iter().enumerate() {
                if block.validation_flags.get(i).copied() != Some(ValidationCode::Valid) {
                    continue;
                }
                if let Some(w) = tx.rwset.writes.iter().find(|w| w.key == key) {
                    out.push(HistoryEntry {
                        tx_id: tx.tx_id.clone(),
                        block_number: block.number,
                        tx_index: i as u64,
                        timestamp_ms: block.timestamp_ms,
                        value: w.value.clone(),
                    });
                }
            }
        }
        out
    }

    /// Committed flag of a transaction, scanning from the tip.
    pub fn tx_status(&self, tx_id: &str) -> Option<(u64, ValidationCode)> {
        self.store.blocks().iter().rev().find_map(|b| {
            b.transactions
                .iter()
                .position(|t| t.tx_id == tx_id)
                .map(|i| (b.number, b.validation_flags.get(i).copied().unwrap_or(ValidationCode::Valid)))
        })
    }
}

/// Endorsement and signature flags for each transaction of `block`. This
/// part of validation reads no state, so callers can run it before taking
/// the ledger lock. Block 0 is accepted as is.
pub fn check_endorsements(block: &Block, check: &dyn EndorsementCheck) -> Vec<ValidationCode> {
    if block.number == 0 {
        return vec![ValidationCode::Valid; block.transactions.len()];
    }
    block.transactions.iter().map(|tx| check.check(tx)).collect()
}

fn valid_writes(block: &Block) -> Vec<(u64, KvWrite)> {
    block
        .transactions
        .iter()
        .enumerate()
        .filter(|(i, _)| block.validation_flags.get(*i).copied() == Some(ValidationCode::Valid))
        .flat_map(|(i, tx)| tx.rwset.writes.iter().map(move |w| (i as u64, w.clone())))
        .collect()
}
