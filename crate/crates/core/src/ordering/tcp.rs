//! Socket transport: each orderer listens on its own address and keeps one
//! outbound connection per peer, carrying [`wire`](super::wire) frames.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::Sender;
use log::debug;
use parking_lot::Mutex;

use super::cutter::BatchPayload;
use super::raft::Envelope;
use super::service::{NodeInput, Transport};
use super::wire::{read_frame, write_frame, Frame};
use super::NodeId;

pub struct TcpTransport {
    peers: BTreeMap<NodeId, SocketAddr>,
    conns: Mutex<BTreeMap<NodeId, TcpStream>>,
}

impl TcpTransport {
    pub fn new(peers: BTreeMap<NodeId, SocketAddr>) -> Self {
        TcpTransport { peers, conns: Mutex::new(BTreeMap::new()) }
    }
}

impl Transport for TcpTransport {
    fn send(&self, env: Envelope<BatchPayload>) {
        let Some(addr) = self.peers.get(&env.to).copied() else { return };
        let to = env.to;
        let frame = Frame::Raft(env);
        let mut conns = self.conns.lock();
        if !conns.contains_key(&to) {
            match TcpStream::connect_timeout(&addr, Duration::from_millis(200)) {
                Ok(s) => {
                    let _ = s.set_nodelay(true);
                    conns.insert(to, s);
                }
                Err(_) => return,
            }
        }
        let stream = conns.get_mut(&to).expect("connection present");
        if write_frame(stream, &frame).is_err() {
            // Raft tolerates loss; reconnect on the next send.
            conns.remove(&to);
        }
    }
}

/// Accepts peer and client connections and feeds decoded frames into the
/// node's inbox while `alive` holds.
pub fn spawn_listener(listener: TcpListener, inbox: Sender<NodeInput>, alive: Arc<AtomicBool>) {
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            if !alive.load(Ordering::Acquire) {
                break;
            }
            let inbox = inbox.clone();
            let alive = alive.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream);
                loop {
                    match read_frame(&mut reader) {
                        Ok(frame) => {
                            if !alive.load(Ordering::Acquire) {
                                break;
                            }
                            let input = match frame {
                                Frame::Raft(env) => NodeInput::Message(env),
                                Frame::Submit(tx) => NodeInput::Submit(tx, None),
                            };
                            if inbox.send(input).is_err() {
                                break;
                            }
                        }
                        Err(e) => {
                            debug!("orderer connection closed: {e}");
                            break;
                        }
                    }
                }
            });
        }
    });
}
