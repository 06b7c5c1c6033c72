//! Append-only block store. On disk each block is one record: a u32
//! big-endian length followed by the block's canonical JSON.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::block::{compute_block_hash, compute_data_hash, Block, Hash32};
use super::LedgerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainStatus {
    Ok,
    /// Number of the first block whose prev_hash or data_hash fails recomputation.
    Corrupt(u64),
}

#[derive(Debug)]
pub struct BlockStore {
    blocks: Vec<Block>,
    file: Option<BufWriter<File>>,
    path: Option<PathBuf>,
}

impl BlockStore {
    pub fn in_memory() -> Self {
        BlockStore { blocks: Vec::new(), file: None, path: None }
    }

    /// Opens (or creates) a file-backed store and loads every record. The
    /// chain is not verified here; call [`BlockStore::verify_chain`].
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let path = path.as_ref().to_path_buf();
        let blocks = if path.exists() { read_records(&path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(BlockStore { blocks, file: Some(BufWriter::new(file)), path: Some(path) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn tip_hash(&self) -> Hash32 {
        self.blocks.last().map(Block::hash).unwrap_or(Hash32::ZERO)
    }

    pub fn block(&self, number: u64) -> Option<&Block> {
        self.blocks.get(number as usize)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Checks that `block` may be appended next without appending it.
    pub fn check_append(&self, block: &Block) -> Result<(), LedgerError> {
        if block.number != self.height() {
            return Err(LedgerError::ChainGap { expected: self.height(), got: block.number });
        }
        if block.prev_hash != self.tip_hash() {
            return Err(LedgerError::HashMismatch { number: block.number });
        }
        Ok(())
    }

    pub fn append_block(&mut self, block: Block) -> Result<(), LedgerError> {
        self.check_append(&block)?;
        if let Some(file) = self.file.as_mut() {
            let bytes = serde_json::to_vec(&block)?;
            file.write_all(&(bytes.len() as u32).to_be_bytes())?;
            file.write_all(&bytes)?;
            file.flush()?;
            file.get_ref().sync_data()?;
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn verify_chain(&self) -> ChainStatus {
        verify_blocks(&self.blocks)
    }
}

pub fn verify_blocks(blocks: &[Block]) -> ChainStatus {
    let mut prev = Hash32::ZERO;
    for (i, block) in blocks.iter().enumerate() {
        if block.number != i as u64 || block.prev_hash != prev || compute_data_hash(&block.transactions) != block.data_hash
        {
            return ChainStatus::Corrupt(i as u64);
        }
        prev = compute_block_hash(&block.header());
    }
    ChainStatus::Ok
}

pub fn read_records(path: &Path) -> Result<Vec<Block>, LedgerError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut blocks = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match reader.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let mut buf = vec![0u8; u32::from_be_bytes(len) as usize];
        reader.read_exact(&mut buf)?;
        blocks.push(serde_json::from_slice(&buf)?);
    }
    Ok(blocks)
}

/// Rewrites a store file from scratch. Only used by tooling and tests that
/// simulate on-disk tampering.
pub fn write_records(path: &Path, blocks: &[Block]) -> Result<(), LedgerError> {
    let mut out = BufWriter::new(File::create(path)?);
    for block in blocks {
        let bytes = serde_json::to_vec(block)?;
        out.write_all(&(bytes.len() as u32).to_be_bytes())?;
        out.write_all(&bytes)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: u64) -> Vec<Block> {
        let mut prev = Hash32::ZERO;
        (0..n)
            .map(|i| {
                let b = Block::new(i, prev, 1_000 + i, Vec::new());
                prev = b.hash();
                b
            })
            .collect()
    }

    #[test]
    fn genesis_append_gives_height_one() {
        let mut s = BlockStore::in_memory();
        s.append_block(chain(1).remove(0)).unwrap();
        assert_eq!(s.height(), 1);
    }

    #[test]
    fn wrong_number_is_a_gap() {
        let mut s = BlockStore::in_memory();
        let blocks = chain(2);
        s.append_block(blocks[0].clone()).unwrap();
        let skip = Block::new(2, blocks[0].hash(), 0, Vec::new());
        assert!(matches!(s.append_block(skip), Err(LedgerError::ChainGap { expected: 1, got: 2 })));
    }

    #[test]
    fn corrupted_prev_hash_is_rejected() {
        let mut s = BlockStore::in_memory();
        let blocks = chain(2);
        s.append_block(blocks[0].clone()).unwrap();
        let mut bad = blocks[1].clone();
        bad.prev_hash.0[0] ^= 1;
        assert!(matches!(s.append_block(bad), Err(LedgerError::HashMismatch { number: 1 })));
    }

    #[test]
    fn file_store_round_trips_and_detects_prev_hash_edit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blocks.bin");
        {
            let mut s = BlockStore::open(&path).unwrap();
            for b in chain(10) {
                s.append_block(b).unwrap();
            }
        }
        let s = BlockStore::open(&path).unwrap();
        assert_eq!(s.height(), 10);
        assert_eq!(s.verify_chain(), ChainStatus::Ok);

        let mut blocks = read_records(&path).unwrap();
        blocks[7].prev_hash.0[5] ^= 0x40;
        write_records(&path, &blocks).unwrap();
        assert_eq!(BlockStore::open(&path).unwrap().verify_chain(), ChainStatus::Corrupt(7));
    }
}
