use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::RecvTimeoutError;
use log::warn;
use organchain_core::donation::{MatchSelected, Organ, EVENT_MATCH_SELECTED};
use organchain_core::ledger::{Block, ChaincodeEvent};
use organchain_core::network::{EventFilter, Network, NetworkError};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

/// One transporter notice per committed `MatchSelected` event. Ids count
/// from 1 in chain order, so a log rebuilt from the ledger reuses them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportNotice {
    pub id: u64,
    #[serde(rename = "patientId")]
    pub patient_id: String,
    #[serde(rename = "donorId")]
    pub donor_id: String,
    pub organ: Organ,
    #[serde(rename = "sourceHospital")]
    pub source_hospital: String,
    #[serde(rename = "destinationHospital")]
    pub destination_hospital: String,
    /// Block the selection committed in.
    pub block: u64,
    pub tx_id: String,
}

pub struct NoticeLog {
    notices: RwLock<Vec<TransportNotice>>,
    live: broadcast::Sender<TransportNotice>,
    stop: Arc<AtomicBool>,
    ingest: Mutex<Option<JoinHandle<()>>>,
}

fn parse(ev: &ChaincodeEvent) -> Option<MatchSelected> {
    if ev.name != EVENT_MATCH_SELECTED {
        return None;
    }
    match serde_json::from_slice(&ev.payload) {
        Ok(m) => Some(m),
        Err(e) => {
            warn!("unreadable {EVENT_MATCH_SELECTED} payload: {e}");
            None
        }
    }
}

impl NoticeLog {
    /// Rebuilds the log from the channel's chain, then follows new commits.
    pub fn start(net: &Network, channel: &str) -> Result<Arc<Self>, NetworkError> {
        let ch = net.channel(channel)?;
        let events = ch.subscribe(EventFilter::EventName(EVENT_MATCH_SELECTED.into()));
        let blocks: Vec<Block> = match ch.peers().first().and_then(|p| p.channel(channel)) {
            Some(pc) => pc.ledger().read().store().blocks().to_vec(),
            None => vec![],
        };
        let (live, _) = broadcast::channel(1024);
        let log = Arc::new(NoticeLog {
            notices: RwLock::new(Vec::new()),
            live,
            stop: Arc::new(AtomicBool::new(false)),
            ingest: Mutex::new(None),
        });
        for block in &blocks {
            for (i, tx) in block.transactions.iter().enumerate() {
                if block.validation_flags.get(i).is_some_and(|f| f.is_valid()) {
                    if let Some(m) = tx.event.as_ref().and_then(parse) {
                        log.push(m, block.number, &tx.tx_id);
                    }
                }
            }
        }
        let seen = blocks.len() as u64;
        let (weak, stop) = (Arc::downgrade(&log), log.stop.clone());
        let handle = std::thread::Builder::new()
            .name(format!("notices-{channel}"))
            .spawn(move || loop {
                match events.recv_timeout(Duration::from_millis(200)) {
                    Ok(ev) if ev.block_number >= seen => {
                        let Some(log) = weak.upgrade() else { return };
                        if let Some(m) = ev.chaincode_event.as_ref().and_then(parse) {
                            log.push(m, ev.block_number, &ev.tx_id);
                        }
                    }
                    Ok(_) => {}
                    Err(RecvTimeoutError::Timeout) if !stop.load(Ordering::Acquire) => {}
                    Err(_) => return,
                }
            })
            .expect("spawn notice ingest");
        *log.ingest.lock() = Some(handle);
        Ok(log)
    }

    fn push(&self, m: MatchSelected, block: u64, tx_id: &str) {
        let mut notices = self.notices.write();
        let notice = TransportNotice {
            id: notices.len() as u64 + 1,
            patient_id: m.patient_id,
            donor_id: m.donor_id,
            organ: m.organ,
            source_hospital: m.source_hospital,
            destination_hospital: m.destination_hospital,
            block,
            tx_id: tx_id.to_string(),
        };
        notices.push(notice.clone());
        let _ = self.live.send(notice);
    }

    /// Notices with id greater than `last_seen`, in order.
    pub fn after(&self, last_seen: u64) -> Vec<TransportNotice> {
        self.notices.read().iter().skip(last_seen as usize).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.notices.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subscribe(&self) -> broadcast::Receiver<TransportNotice> {
        self.live.subscribe()
    }

    pub fn shutdown(&self) {
        self.stop.store(true, Ordering::Release);
        let handle = self.ingest.lock().take();
        if let Some(h) = handle {
            if h.thread().id() != std::thread::current().id() {
                let _ = h.join();
            }
        }
    }
}

impl Drop for NoticeLog {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
    }
}
