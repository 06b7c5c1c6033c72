//! Deterministic, virtual-time simulation of an orderer cluster. Messages
//! get random delays (so they reorder), may be dropped, and nodes can be
//! paused ("crashed") and resumed. Everything is driven by one seeded RNG.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cutter::{BatchPayload, OrderingConfig};
use super::node::OrdererNode;
use super::raft::{Envelope, RaftConfig};
use super::{NodeId, OrderError};
use crate::ledger::Transaction;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub members: Vec<NodeId>,
    pub seed: u64,
    /// Probability each message is lost.
    pub drop_prob: f64,
    /// Messages arrive 1..=max_delay_ticks after sending.
    pub max_delay_ticks: u64,
    /// Virtual milliseconds per tick.
    pub tick_ms: u64,
}

impl SimConfig {
    pub fn new(members: Vec<NodeId>, seed: u64) -> Self {
        SimConfig { members, seed, drop_prob: 0.0, max_delay_ticks: 2, tick_ms: 10 }
    }
}

pub struct SimCluster {
    nodes: BTreeMap<NodeId, OrdererNode>,
    crashed: BTreeSet<NodeId>,
    in_flight: BinaryHeap<Reverse<(u64, u64)>>,
    messages: HashMap<u64, Envelope<BatchPayload>>,
    next_msg: u64,
    now: u64,
    rng: ChaCha8Rng,
    config: SimConfig,
}

impl SimCluster {
    pub fn new(ordering: OrderingConfig, config: SimConfig) -> Self {
        let nodes = config
            .members
            .iter()
            .map(|&id| {
                let raft = RaftConfig::new(id, config.members.clone(), config.seed);
                (id, OrdererNode::new(ordering.clone(), raft))
            })
            .collect();
        SimCluster {
            nodes,
            crashed: BTreeSet::new(),
            in_flight: BinaryHeap::new(),
            messages: HashMap::new(),
            next_msg: 0,
            now: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
        }
    }

    pub fn now_ticks(&self) -> u64 {
        self.now
    }

    pub fn now_ms(&self) -> u64 {
        self.now * self.config.tick_ms
    }

    pub fn set_drop_prob(&mut self, p: f64) {
        self.config.drop_prob = p;
    }

    pub fn node(&self, id: NodeId) -> &OrdererNode {
        &self.nodes[&id]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &OrdererNode> {
        self.nodes.values()
    }

    pub fn is_crashed(&self, id: NodeId) -> bool {
        self.crashed.contains(&id)
    }

    pub fn crash(&mut self, id: NodeId) {
        self.crashed.insert(id);
    }

    pub fn recover(&mut self, id: NodeId) {
        self.crashed.remove(&id);
    }

    pub fn crashed_count(&self) -> usize {
        self.crashed.len()
    }

    /// Live node that believes it leads with the highest term.
    pub fn leader(&self) -> Option<NodeId> {
        self.nodes
            .values()
            .filter(|n| !self.crashed.contains(&n.id()) && n.is_leader())
            .max_by_key(|n| n.raft().term())
            .map(|n| n.id())
    }

    fn enqueue(&mut self, out: Vec<Envelope<BatchPayload>>) {
        for env in out {
            if self.rng.gen_bool(self.config.drop_prob.clamp(0.0, 1.0)) {
                continue;
            }
            let at = self.now + self.rng.gen_range(1..=self.config.max_delay_ticks.max(1));
            let id = self.next_msg;
            self.next_msg += 1;
            self.messages.insert(id, env);
            self.in_flight.push(Reverse((at, id)));
        }
    }

    /// Submits to the current leader, if any.
    pub fn submit(&mut self, tx: Transaction) -> Result<(), OrderError> {
        let leader = self.leader().ok_or(OrderError::NotLeader(None))?;
        let now = self.now_ms();
        let out = self.nodes.get_mut(&leader).expect("leader exists").submit(tx, now)?;
        self.enqueue(out);
        Ok(())
    }

    /// Submits to a specific node, returning its answer.
    pub fn submit_to(&mut self, id: NodeId, tx: Transaction) -> Result<(), OrderError> {
        if self.crashed.contains(&id) {
            return Err(OrderError::OrdererUnavailable);
        }
        let now = self.now_ms();
        let out = self.nodes.get_mut(&id).expect("known node").submit(tx, now)?;
        self.enqueue(out);
        Ok(())
    }

    /// Advances one tick: delivers due messages, then ticks every live node.
    pub fn step(&mut self) {
        self.now += 1;
        let now_ms = self.now_ms();
        while let Some(Reverse((at, id))) = self.in_flight.peek().copied() {
            if at > self.now {
                break;
            }
            self.in_flight.pop();
            let env = self.messages.remove(&id).expect("message stored");
            if self.crashed.contains(&env.to) || self.crashed.contains(&env.from) {
                continue;
            }
            let out = self.nodes.get_mut(&env.to).expect("known node").handle(env);
            self.enqueue(out);
        }
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            if self.crashed.contains(&id) {
                continue;
            }
            let out = self.nodes.get_mut(&id).expect("known node").tick(now_ms);
            self.enqueue(out);
        }
    }

    pub fn run(&mut self, ticks: u64) {
        for _ in 0..ticks {
            self.step();
        }
    }
}
