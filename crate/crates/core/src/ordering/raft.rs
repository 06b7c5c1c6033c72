//! Raft as a pure, event-driven state machine.
//!
//! A node never reads a clock. Time arrives as [`Input::Tick`], messages as
//! [`Input::Message`], and every call returns the messages to send. The same
//! code runs under the deterministic simulator and the live runtime.

use std::collections::{BTreeMap, BTreeSet};

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type NodeId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaftRole {
    Follower,
    Candidate,
    Leader,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryData<P> {
    /// Appended by every new leader so entries of earlier terms can commit.
    Noop,
    Data(P),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry<P> {
    pub term: u64,
    pub data: EntryData<P>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RaftMessage<P> {
    RequestVote { term: u64, last_log_index: u64, last_log_term: u64 },
    Vote { term: u64, granted: bool },
    AppendEntries { term: u64, prev_log_index: u64, prev_log_term: u64, entries: Vec<LogEntry<P>>, leader_commit: u64 },
    /// `match_index` is the follower's last matching index on success, or
    /// its last log index as a back-off hint on failure.
    AppendResponse { term: u64, success: bool, match_index: u64 },
}

impl<P> RaftMessage<P> {
    pub fn term(&self) -> u64 {
        match self {
            RaftMessage::RequestVote { term, .. }
            | RaftMessage::Vote { term, .. }
            | RaftMessage::AppendEntries { term, .. }
            | RaftMessage::AppendResponse { term, .. } => *term,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope<P> {
    pub from: NodeId,
    pub to: NodeId,
    pub msg: RaftMessage<P>,
}

#[derive(Debug, Clone)]
pub enum Input<P> {
    Tick,
    Message(Envelope<P>),
}

#[derive(Debug, Clone)]
pub struct RaftConfig {
    pub id: NodeId,
    /// Every cluster member, including `id`.
    pub members: Vec<NodeId>,
    pub election_ticks_min: u32,
    pub election_ticks_max: u32,
    pub heartbeat_ticks: u32,
    pub max_entries_per_append: usize,
    pub seed: u64,
}

impl RaftConfig {
    pub fn new(id: NodeId, members: Vec<NodeId>, seed: u64) -> Self {
        RaftConfig {
            id,
            members,
            election_ticks_min: 15,
            election_ticks_max: 30,
            heartbeat_ticks: 3,
            max_entries_per_append: 64,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotLeader {
    pub leader_hint: Option<NodeId>,
}

#[derive(Debug)]
pub struct RaftNode<P> {
    config: RaftConfig,
    current_term: u64,
    voted_for: Option<NodeId>,
    /// `log[i]` holds index `i + 1`.
    log: Vec<LogEntry<P>>,
    commit_index: u64,
    last_applied: u64,
    role: RaftRole,
    leader_id: Option<NodeId>,
    votes: BTreeSet<NodeId>,
    next_index: BTreeMap<NodeId, u64>,
    match_index: BTreeMap<NodeId, u64>,
    election_elapsed: u32,
    election_timeout: u32,
    heartbeat_elapsed: u32,
    rng: ChaCha8Rng,
}

impl<P: Clone> RaftNode<P> {
    pub fn new(config: RaftConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ config.id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let election_timeout = rng.gen_range(config.election_ticks_min..=config.election_ticks_max);
        RaftNode {
            config,
            current_term: 0,
            voted_for: None,
            log: Vec::new(),
            commit_index: 0,
            last_applied: 0,
            role: RaftRole::Follower,
            leader_id: None,
            votes: BTreeSet::new(),
            next_index: BTreeMap::new(),
            match_index: BTreeMap::new(),
            election_elapsed: 0,
            election_timeout,
            heartbeat_elapsed: 0,
            rng,
        }
    }

    pub fn id(&self) -> NodeId {
        self.config.id
    }

    pub fn term(&self) -> u64 {
        self.current_term
    }

    pub fn role(&self) -> RaftRole {
        self.role
    }

    pub fn is_leader(&self) -> bool {
        self.role == RaftRole::Leader
    }

    pub fn leader_id(&self) -> Option<NodeId> {
        self.leader_id
    }

    pub fn voted_for(&self) -> Option<NodeId> {
        self.voted_for
    }

    pub fn commit_index(&self) -> u64 {
        self.commit_index
    }

    pub fn last_index(&self) -> u64 {
        self.log.len() as u64
    }

    pub fn log(&self) -> &[LogEntry<P>] {
        &self.log
    }

    fn term_at(&self, index: u64) -> u64 {
        if index == 0 {
            0
        } else {
            self.log.get(index as usize - 1).map(|e| e.term).unwrap_or(0)
        }
    }

    fn last_term(&self) -> u64 {
        self.term_at(self.last_index())
    }

    fn quorum(&self) -> usize {
        self.config.members.len() / 2 + 1
    }

    fn peers(&self) -> impl Iterator<Item = NodeId> + '_ {
        let me = self.config.id;
        self.config.members.iter().copied().filter(move |&m| m != me)
    }

    fn reset_election_timer(&mut self) {
        self.election_elapsed = 0;
        self.election_timeout = self.rng.gen_range(self.config.election_ticks_min..=self.config.election_ticks_max);
    }

    fn become_follower(&mut self, term: u64, leader: Option<NodeId>) {
        if term > self.current_term {
            self.current_term = term;
            self.voted_for = None;
        }
        self.role = RaftRole::Follower;
        self.leader_id = leader;
        self.votes.clear();
        self.reset_election_timer();
    }

    pub fn step(&mut self, input: Input<P>) -> Vec<Envelope<P>> {
        match input {
            Input::Tick => self.tick(),
            Input::Message(env) => {
                if env.to != self.config.id || !self.config.members.contains(&env.from) {
                    debug!("node {} ignoring misaddressed message from {}", self.config.id, env.from);
                    return Vec::new();
                }
                self.handle(env.from, env.msg)
            }
        }
    }

    /// Appends `payload` to the leader's log and starts replicating it.
    pub fn propose(&mut self, payload: P) -> Result<(u64, Vec<Envelope<P>>), NotLeader> {
        if self.role != RaftRole::Leader {
            return Err(NotLeader { leader_hint: self.leader_id });
        }
        self.log.push(LogEntry { term: self.current_term, data: EntryData::Data(payload) });
        let index = self.last_index();
        self.match_index.insert(self.config.id, index);
        self.maybe_advance_commit();
        Ok((index, self.broadcast_append()))
    }

    /// Entries committed since the last call, with their log indexes.
    pub fn take_committed(&mut self) -> Vec<(u64, LogEntry<P>)> {
        let mut out = Vec::new();
        while self.last_applied < self.commit_index {
            self.last_applied += 1;
            out.push((self.last_applied, self.log[self.last_applied as usize - 1].clone()));
        }
        out
    }

    fn tick(&mut self) -> Vec<Envelope<P>> {
        match self.role {
            RaftRole::Leader => {
                self.heartbeat_elapsed += 1;
                if self.heartbeat_elapsed >= self.config.heartbeat_ticks {
                    self.heartbeat_elapsed = 0;
                    return self.broadcast_append();
                }
                Vec::new()
            }
            RaftRole::Follower | RaftRole::Candidate => {
                self.election_elapsed += 1;
                if self.election_elapsed >= self.election_timeout {
                    return self.campaign();
                }
                Vec::new()
            }
        }
    }

    fn campaign(&mut self) -> Vec<Envelope<P>> {
        self.current_term += 1;
        self.role = RaftRole::Candidate;
        self.voted_for = Some(self.config.id);
        self.leader_id = None;
        self.votes.clear();
        self.votes.insert(self.config.id);
        self.reset_election_timer();
        debug!("node {} campaigning in term {}", self.config.id, self.current_term);
        if self.votes.len() >= self.quorum() {
            return self.become_leader();
        }
        let msg = RaftMessage::RequestVote {
            term: self.current_term,
            last_log_index: self.last_index(),
            last_log_term: self.last_term(),
        };
        self.peers().map(|to| Envelope { from: self.config.id, to, msg: msg.clone() }).collect()
    }

    fn become_leader(&mut self) -> Vec<Envelope<P>> {
        debug!("node {} is leader for term {}", self.config.id, self.current_term);
        self.role = RaftRole::Leader;
        self.leader_id = Some(self.config.id);
        self.heartbeat_elapsed = 0;
        self.log.push(LogEntry { term: self.current_term, data: EntryData::Noop });
        let last = self.last_index();
        self.next_index = self.config.members.iter().map(|&m| (m, last)).collect();
        self.match_index = self.config.members.iter().map(|&m| (m, 0)).collect();
        self.match_index.insert(self.config.id, last);
        self.maybe_advance_commit();
        self.broadcast_append()
    }

    fn append_for(&self, to: NodeId) -> Envelope<P> {
        let next = self.next_index.get(&to).copied().unwrap_or(self.last_index() + 1).max(1);
        let prev = next - 1;
        let end = (prev as usize + self.config.max_entries_per_append).min(self.log.len());
        let entries = self.log[prev as usize..end].to_vec();
        Envelope {
            from: self.config.id,
            to,
            msg: RaftMessage::AppendEntries {
                term: self.current_term,
                prev_log_index: prev,
                prev_log_term: self.term_at(prev),
                entries,
                leader_commit: self.commit_index,
            },
        }
    }

    fn broadcast_append(&self) -> Vec<Envelope<P>> {
        self.peers().map(|to| self.append_for(to)).collect()
    }

    fn maybe_advance_commit(&mut self) {
        let mut matched: Vec<u64> = self.config.members.iter().map(|m| *self.match_index.get(m).unwrap_or(&0)).collect();
        matched.sort_unstable_by(|a, b| b.cmp(a));
        let candidate = matched[self.quorum() - 1];
        // Only entries from the current term commit by counting replicas.
        if candidate > self.commit_index && self.term_at(candidate) == self.current_term {
            self.commit_index = candidate;
        }
    }

    fn handle(&mut self, from: NodeId, msg: RaftMessage<P>) -> Vec<Envelope<P>> {
        if msg.term() > self.current_term {
            let leader = matches!(msg, RaftMessage::AppendEntries { .. }).then_some(from);
            self.become_follower(msg.term(), leader);
        }
        let me = self.config.id;
        let reply = |msg| vec![Envelope { from: me, to: from, msg }];
        match msg {
            RaftMessage::RequestVote { term, last_log_index, last_log_term } => {
                let up_to_date = last_log_term > self.last_term()
                    || (last_log_term == self.last_term() && last_log_index >= self.last_index());
                let granted = term == self.current_term
                    && self.voted_for.map_or(true, |v| v == from)
                    && up_to_date
                    && self.role != RaftRole::Leader;
                if granted {
                    self.voted_for = Some(from);
                    self.reset_election_timer();
                }
                reply(RaftMessage::Vote { term: self.current_term, granted })
            }
            RaftMessage::Vote { term, granted } => {
                if self.role == RaftRole::Candidate && term == self.current_term && granted {
                    self.votes.insert(from);
                    if self.votes.len() >= self.quorum() {
                        return self.become_leader();
                    }
                }
                Vec::new()
            }
            RaftMessage::AppendEntries { term, prev_log_index, prev_log_term, entries, leader_commit } => {
                if term < self.current_term {
                    return reply(RaftMessage::AppendResponse {
                        term: self.current_term,
                        success: false,
                        match_index: self.last_index(),
                    });
                }
                if self.role != RaftRole::Follower || self.leader_id != Some(from) {
                    self.become_follower(term, Some(from));
                } else {
                    self.reset_election_timer();
                }
                if prev_log_index > self.last_index() || self.term_at(prev_log_index) != prev_log_term {
                    let hint = self.last_index().min(prev_log_index.saturating_sub(1));
                    return reply(RaftMessage::AppendResponse { term: self.current_term, success: false, match_index: hint });
                }
                let mut index = prev_log_index;
                for entry in entries {
                    index += 1;
                    if index <= self.last_index() {
                        if self.term_at(index) == entry.term {
                            continue;
                        }
                        // Conflict: drop this entry and everything after it.
                        debug_assert!(index > self.commit_index, "truncating committed entry");
                        self.log.truncate(index as usize - 1);
                    }
                    self.log.push(entry);
                }
                if leader_commit > self.commit_index {
                    self.commit_index = leader_commit.min(index);
                }
                reply(RaftMessage::AppendResponse { term: self.current_term, success: true, match_index: index })
            }
            RaftMessage::AppendResponse { term, success, match_index } => {
                if self.role != RaftRole::Leader || term != self.current_term {
                    return Vec::new();
                }
                if success {
                    let m = self.match_index.entry(from).or_insert(0);
                    *m = (*m).max(match_index);
                    let m = *m;
                    self.next_index.insert(from, m + 1);
                    self.maybe_advance_commit();
                    if m < self.last_index() {
                        return vec![self.append_for(from)];
                    }
                    Vec::new()
                } else {
                    let next = self.next_index.get(&from).copied().unwrap_or(1);
                    let backed = next.saturating_sub(1).min(match_index + 1).max(1);
                    self.next_index.insert(from, backed);
                    vec![self.append_for(from)]
                }
            }
        }
    }
}
