//! Binary framing for orderer traffic.
//!
//! ```text
//! frame   := len:u32 body            (len = byte length of body, big-endian)
//! body    := kind:u8 from:u64 to:u64 fields...
//! kind 1  RequestVote     term:u64 last_log_index:u64 last_log_term:u64
//! kind 2  Vote            term:u64 granted:u8
//! kind 3  AppendEntries   term:u64 prev_log_index:u64 prev_log_term:u64
//!                         leader_commit:u64 count:u32 entry*count
//! kind 4  AppendResponse  term:u64 success:u8 match_index:u64
//! kind 5  Submit          tx:bytes                 (from/to are 0 for clients)
//! entry   := term:u64 tag:u8 [batch]          tag 0 = no-op, 1 = batch
//! batch   := timestamp_ms:u64 count:u32 tx:bytes*count
//! bytes   := len:u32 raw                      (tx = canonical JSON)
//! ```
//! All integers are big-endian.

use std::io::{Read, Write};

use thiserror::Error;

use super::cutter::BatchPayload;
use super::raft::{EntryData, Envelope, LogEntry, RaftMessage};
use crate::ledger::Transaction;

pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame truncated")]
    Truncated,
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("unknown entry tag {0}")]
    UnknownTag(u8),
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("bad transaction encoding: {0}")]
    Transaction(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Raft(Envelope<BatchPayload>),
    Submit(Transaction),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], WireError> {
        if self.0.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn bytes(&mut self) -> Result<&[u8], WireError> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

/// Encodes a frame body (without the outer length prefix).
pub fn encode_body(frame: &Frame) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    match frame {
        Frame::Submit(tx) => {
            w.u8(5);
            w.u64(0);
            w.u64(0);
            w.bytes(&tx.canonical_bytes());
        }
        Frame::Raft(env) => {
            let kind = match env.msg {
                RaftMessage::RequestVote { .. } => 1,
                RaftMessage::Vote { .. } => 2,
                RaftMessage::AppendEntries { .. } => 3,
                RaftMessage::AppendResponse { .. } => 4,
            };
            w.u8(kind);
            w.u64(env.from);
            w.u64(env.to);
            match &env.msg {
                RaftMessage::RequestVote { term, last_log_index, last_log_term } => {
                    w.u64(*term);
                    w.u64(*last_log_index);
                    w.u64(*last_log_term);
                }
                RaftMessage::Vote { term, granted } => {
                    w.u64(*term);
                    w.u8(*granted as u8);
                }
                RaftMessage::AppendEntries { term, prev_log_index, prev_log_term, entries, leader_commit } => {
                    w.u64(*term);
                    w.u64(*prev_log_index);
                    w.u64(*prev_log_term);
                    w.u64(*leader_commit);
                    w.u32(entries.len() as u32);
                    for e in entries {
                        w.u64(e.term);
                        match &e.data {
                            EntryData::Noop => w.u8(0),
                            EntryData::Data(batch) => {
                                w.u8(1);
                                w.u64(batch.timestamp_ms);
                                w.u32(batch.transactions.len() as u32);
                                for tx in &batch.transactions {
                                    w.bytes(&tx.canonical_bytes());
                                }
                            }
                        }
                    }
                }
                RaftMessage::AppendResponse { term, success, match_index } => {
                    w.u64(*term);
                    w.u8(*success as u8);
                    w.u64(*match_index);
                }
            }
        }
    }
    w.0
}

pub fn decode_body(body: &[u8]) -> Result<Frame, WireError> {
    let mut r = Reader(body);
    let kind = r.u8()?;
    let from = r.u64()?;
    let to = r.u64()?;
    let msg = match kind {
        1 => RaftMessage::RequestVote { term: r.u64()?, last_log_index: r.u64()?, last_log_term: r.u64()? },
        2 => RaftMessage::Vote { term: r.u64()?, granted: r.u8()? != 0 },
        3 => {
            let term = r.u64()?;
            let prev_log_index = r.u64()?;
            let prev_log_term = r.u64()?;
            let leader_commit = r.u64()?;
            let n = r.u32()? as usize;
            let mut entries = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                let term = r.u64()?;
                let data = match r.u8()? {
                    0 => EntryData::Noop,
                    1 => {
                        let timestamp_ms = r.u64()?;
                        let count = r.u32()? as usize;
                        let mut transactions = Vec::with_capacity(count.min(1024));
                        for _ in 0..count {
                            transactions.push(serde_json::from_slice(r.bytes()?)?);
                        }
                        EntryData::Data(BatchPayload { timestamp_ms, transactions })
                    }
                    t => return Err(WireError::UnknownTag(t)),
                };
                entries.push(LogEntry { term, data });
            }
            RaftMessage::AppendEntries { term, prev_log_index, prev_log_term, entries, leader_commit }
        }
        4 => RaftMessage::AppendResponse { term: r.u64()?, success: r.u8()? != 0, match_index: r.u64()? },
        5 => return Ok(Frame::Submit(serde_json::from_slice(r.bytes()?)?)),
        k => return Err(WireError::UnknownKind(k)),
    };
    if !r.0.is_empty() {
        return Err(WireError::Truncated);
    }
    Ok(Frame::Raft(Envelope { from, to, msg }))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), WireError> {
    let body = encode_body(frame);
    if body.len() > MAX_FRAME {
        return Err(WireError::TooLarge(body.len()));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, WireError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(WireError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    decode_body(&body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::test_support::tx;
    use proptest::prelude::*;

    #[test]
    fn vote_layout_is_fixed() {
        let body = encode_body(&Frame::Raft(Envelope { from: 1, to: 2, msg: RaftMessage::Vote { term: 3, granted: true } }));
        let mut expect = vec![2u8];
        expect.extend_from_slice(&1u64.to_be_bytes());
        expect.extend_from_slice(&2u64.to_be_bytes());
        expect.extend_from_slice(&3u64.to_be_bytes());
        expect.push(1);
        assert_eq!(body, expect);
    }

    #[test]
    fn truncated_and_unknown_frames_error() {
        assert!(matches!(decode_body(&[2, 0, 0]), Err(WireError::Truncated)));
        assert!(matches!(decode_body(&[9; 17]), Err(WireError::UnknownKind(9))));
    }

    fn arb_msg() -> impl Strategy<Value = RaftMessage<BatchPayload>> {
        let entry = (any::<u64>(), prop::option::of((any::<u64>(), 0usize..3))).prop_map(|(term, data)| LogEntry {
            term,
            data: match data {
                None => EntryData::Noop,
                Some((ts, n)) => EntryData::Data(BatchPayload {
                    timestamp_ms: ts,
                    transactions: (0..n).map(|i| tx(&format!("t{i}"), vec![], vec![("k", Some("v"))])).collect(),
                }),
            },
        });
        prop_oneof![
            (any::<u64>(), any::<u64>(), any::<u64>())
                .prop_map(|(term, i, t)| RaftMessage::RequestVote { term, last_log_index: i, last_log_term: t }),
            (any::<u64>(), any::<bool>()).prop_map(|(term, granted)| RaftMessage::Vote { term, granted }),
            (any::<u64>(), any::<u64>(), any::<u64>(), prop::collection::vec(entry, 0..4), any::<u64>()).prop_map(
                |(term, pi, pt, entries, lc)| RaftMessage::AppendEntries {
                    term,
                    prev_log_index: pi,
                    prev_log_term: pt,
                    entries,
                    leader_commit: lc
                }
            ),
            (any::<u64>(), any::<bool>(), any::<u64>())
                .prop_map(|(term, success, m)| RaftMessage::AppendResponse { term, success, match_index: m }),
        ]
    }

    proptest! {
        #[test]
        fn frames_round_trip(from in any::<u64>(), to in any::<u64>(), msg in arb_msg()) {
            let frame = Frame::Raft(Envelope { from, to, msg });
            let mut buf = Vec::new();
            write_frame(&mut buf, &frame).unwrap();
            prop_assert_eq!(read_frame(&mut buf.as_slice()).unwrap(), frame);
        }
    }
}
