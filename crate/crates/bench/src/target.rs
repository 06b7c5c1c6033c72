use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::RecvTimeoutError;
use organchain_core::donation::{BloodGroup, Gender, Organ, RecordInput, CHAINCODE_NAME};
use organchain_core::identity::SigningKey;
use organchain_core::network::{EventFilter, Network, NetworkError};
use organchain_core::ordering::OrderError;
use parking_lot::{Condvar, Mutex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Operation, WorkloadConfig};
use crate::metrics::Outcome;
use crate::BenchError;

/// Called exactly once per issued transaction with its id and outcome.
pub type Completion = Box<dyn FnOnce(String, Outcome) + Send>;

pub trait Target: Send + Sync {
    /// Runs before the clock starts, e.g. to pre-populate keys for reads.
    fn prepare(&self, _config: &WorkloadConfig) -> Result<(), BenchError> {
        Ok(())
    }

    /// Starts transaction `index`. `done` may run before this returns. An
    /// error means the target is gone and `done` is never called.
    fn issue(&self, op: Operation, index: u64, done: Completion) -> Result<(), BenchError>;
}

struct Timer {
    queue: Mutex<TimerQueue>,
    wake: Condvar,
}

#[derive(Default)]
struct TimerQueue {
    heap: BinaryHeap<Reverse<(Instant, u64)>>,
    jobs: HashMap<u64, Box<dyn FnOnce() + Send>>,
    next: u64,
    stop: bool,
}

impl Timer {
    fn start() -> (Arc<Timer>, JoinHandle<()>) {
        let timer = Arc::new(Timer { queue: Mutex::new(TimerQueue::default()), wake: Condvar::new() });
        let t = timer.clone();
        let handle = std::thread::Builder::new()
            .name("stub-timer".into())
            .spawn(move || t.run())
            .expect("spawn timer");
        (timer, handle)
    }

    fn at(&self, when: Instant, job: Box<dyn FnOnce() + Send>) {
        let mut q = self.queue.lock();
        let id = q.next;
        q.next += 1;
        q.heap.push(Reverse((when, id)));
        q.jobs.insert(id, job);
        self.wake.notify_one();
    }

    fn run(&self) {
        let mut q = self.queue.lock();
        loop {
            let now = Instant::now();
            match q.heap.peek().copied() {
                Some(Reverse((when, id))) if when <= now => {
                    q.heap.pop();
                    let job = q.jobs.remove(&id).expect("job queued");
                    drop(q);
                    job();
                    q = self.queue.lock();
                }
                _ if q.stop => return,
                Some(Reverse((when, _))) => {
                    self.wake.wait_until(&mut q, when);
                }
                None => self.wake.wait(&mut q),
            }
        }
    }
}

/// Synthetic target. Each transaction costs `issue_cost` on the issuing
/// thread, then completes `latency` later. With `capacity_tps` set,
/// completions also queue behind a single server of that rate.
pub struct StubTarget {
    issue_cost: Duration,
    latency: Duration,
    capacity_tps: Option<f64>,
    busy_until: Mutex<Option<Instant>>,
    in_flight: Arc<AtomicU64>,
    max_in_flight: Arc<AtomicU64>,
    timer: Arc<Timer>,
    handle: Option<JoinHandle<()>>,
}

impl StubTarget {
    pub fn new(issue_cost: Duration, latency: Duration, capacity_tps: Option<f64>) -> Self {
        let (timer, handle) = Timer::start();
        StubTarget {
            issue_cost,
            latency,
            capacity_tps,
            busy_until: Mutex::new(None),
            in_flight: Arc::new(AtomicU64::new(0)),
            max_in_flight: Arc::new(AtomicU64::new(0)),
            timer,
            handle: Some(handle),
        }
    }

    pub fn instant() -> Self {
        Self::new(Duration::ZERO, Duration::ZERO, None)
    }

    /// Highest number of transactions the stub held at once.
    pub fn max_in_flight(&self) -> u64 {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for StubTarget {
    fn drop(&mut self) {
        self.timer.queue.lock().stop = true;
        self.timer.wake.notify_all();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Target for StubTarget {
    fn issue(&self, _op: Operation, index: u64, done: Completion) -> Result<(), BenchError> {
        let now_in = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now_in, Ordering::SeqCst);
        if !self.issue_cost.is_zero() {
            std::thread::sleep(self.issue_cost);
        }
        let mut ready = Instant::now();
        if let Some(cap) = self.capacity_tps {
            let mut busy = self.busy_until.lock();
            let start = busy.map_or(ready, |b| b.max(ready));
            ready = start + Duration::from_secs_f64(1.0 / cap);
            *busy = Some(ready);
        }
        ready += self.latency;
        let in_flight = self.in_flight.clone();
        let finish = move || {
            in_flight.fetch_sub(1, Ordering::SeqCst);
            done(format!("stub-{index}"), Outcome::Success);
        };
        if ready <= Instant::now() {
            finish();
        } else {
            self.timer.at(ready, Box::new(finish));
        }
        Ok(())
    }
}

type Pending = Arc<Mutex<HashMap<String, Completion>>>;

/// Drives the in-process network. Creates are `addDonor` with seeded random
/// unique ids through the full endorse-order-commit flow; reads are
/// `getDonor` through the query path over pre-populated donors.
pub struct NetworkTarget {
    net: Arc<Network>,
    channel: String,
    key: SigningKey,
    pending: Pending,
    stop: Arc<AtomicBool>,
    dispatcher: Option<JoinHandle<()>>,
    seed: AtomicU64,
    prefilled: AtomicU64,
}

/// Upper bound on donors created for a read workload.
const READ_KEYSPACE: u64 = 1000;

impl NetworkTarget {
    /// `key` must belong to hospital staff on a channel running the
    /// donation chaincode.
    pub fn new(net: Arc<Network>, channel: &str, key: SigningKey) -> Result<Self, BenchError> {
        let events = net.channel(channel).map_err(unreachable)?.subscribe(EventFilter::All);
        let pending: Pending = Arc::default();
        let stop = Arc::new(AtomicBool::new(false));
        let (p, s) = (pending.clone(), stop.clone());
        let dispatcher = std::thread::Builder::new()
            .name("bench-commits".into())
            .spawn(move || loop {
                match events.recv_timeout(Duration::from_millis(100)) {
                    Ok(ev) => {
                        let Some(done) = p.lock().remove(&ev.tx_id) else { continue };
                        let outcome = if ev.flag.is_valid() {
                            Outcome::Success
                        } else {
                            Outcome::Fail(ev.flag.as_str().to_string())
                        };
                        done(ev.tx_id, outcome);
                    }
                    Err(RecvTimeoutError::Timeout) if !s.load(Ordering::Acquire) => {}
                    Err(_) => return,
                }
            })
            .expect("spawn dispatcher");
        Ok(NetworkTarget {
            net,
            channel: channel.to_string(),
            key,
            pending,
            stop,
            dispatcher: Some(dispatcher),
            seed: AtomicU64::new(0),
            prefilled: AtomicU64::new(0),
        })
    }

    fn donor(id: String, rng: &mut ChaCha8Rng) -> String {
        let input = RecordInput {
            id,
            first_name: format!("F{}", rng.gen_range(0..10_000)),
            last_name: format!("L{}", rng.gen_range(0..10_000)),
            age: rng.gen_range(18..80),
            phone_number: format!("{:010}", rng.gen_range(0..10_000_000_000u64)),
            address: format!("{} Main St", rng.gen_range(1..1000)),
            organ_required: Organ::ALL[rng.gen_range(0..Organ::ALL.len())],
            bloodgroup: BloodGroup::ALL[rng.gen_range(0..BloodGroup::ALL.len())],
            gender: Gender::ALL[rng.gen_range(0..Gender::ALL.len())],
            medhistory: "none".into(),
        };
        serde_json::to_string(&input).expect("record serializes")
    }

    fn create(&self, id: String, rng: &mut ChaCha8Rng, done: Completion) -> Result<(), BenchError> {
        let body = Self::donor(id, rng);
        let net = &self.net;
        let proposal = net.new_proposal(&self.channel, CHAINCODE_NAME, "addDonor", vec![body], self.key.identity_id());
        let tx_id = proposal.tx_id.clone();
        let tx = net
            .endorse_proposal(&proposal)
            .and_then(|responses| Network::assemble(&proposal, &responses, &self.key));
        let tx = match tx {
            Ok(tx) => tx,
            Err(e) => return fail_or_unreachable(e, tx_id, done),
        };
        self.pending.lock().insert(tx_id.clone(), done);
        if let Err(e) = net.submit(tx) {
            let done = self.pending.lock().remove(&tx_id).expect("registered above");
            return fail_or_unreachable(e, tx_id, done);
        }
        Ok(())
    }

    fn read_key(&self, index: u64) -> String {
        let n = self.prefilled.load(Ordering::Acquire).max(1);
        format!("r{:x}-{}", self.seed.load(Ordering::Acquire), index % n)
    }

    fn rng(seed: u64, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

fn unreachable(e: NetworkError) -> BenchError {
    BenchError::TargetUnreachable(e.to_string())
}

fn fail_or_unreachable(e: NetworkError, tx_id: String, done: Completion) -> Result<(), BenchError> {
    match e {
        NetworkError::Halted(_)
        | NetworkError::UnknownChannel(_)
        | NetworkError::Order(OrderError::OrdererUnavailable) => Err(unreachable(e)),
        NetworkError::Chaincode(c) => {
            done(tx_id, Outcome::Fail(c.kind.as_str().to_string()));
            Ok(())
        }
        other => {
            done(tx_id, Outcome::Fail(other.to_string()));
            Ok(())
        }
    }
}

impl Target for NetworkTarget {
    fn prepare(&self, config: &WorkloadConfig) -> Result<(), BenchError> {
        self.seed.store(config.seed, Ordering::Release);
        if config.operation != Operation::ReadRecord {
            return Ok(());
        }
        let n = config.total_tx.min(READ_KEYSPACE);
        let (tx, rx) = crossbeam_channel::unbounded();
        for i in 0..n {
            let id = format!("r{:x}-{i}", config.seed);
            let tx = tx.clone();
            let mut rng = Self::rng(config.seed, i);
            self.create(id, &mut rng, Box::new(move |_, o| drop(tx.send(o))))?;
        }
        for _ in 0..n {
            match rx.recv_timeout(self.net.options().commit_timeout) {
                Ok(Outcome::Success) => {}
                // Left over from an earlier run with the same seed.
                Ok(Outcome::Fail(reason)) if reason == "DuplicateID" => {}
                Ok(Outcome::Fail(reason)) => {
                    return Err(BenchError::TargetUnreachable(format!("pre-populating donors failed: {reason}")))
                }
                Err(_) => return Err(BenchError::TargetUnreachable("pre-populating donors timed out".into())),
            }
        }
        self.prefilled.store(n, Ordering::Release);
        Ok(())
    }

    fn issue(&self, op: Operation, index: u64, done: Completion) -> Result<(), BenchError> {
        let seed = self.seed.load(Ordering::Acquire);
        match op {
            Operation::CreateRecord => {
                let mut rng = Self::rng(seed, index);
                let id = format!("b{:x}-{index}-{:08x}", seed, rng.gen::<u32>());
                self.create(id, &mut rng, done)
            }
            Operation::ReadRecord => {
                let key = self.read_key(index);
                let id_hint = format!("read-{index}");
                match self.net.query(&self.channel, CHAINCODE_NAME, "getDonor", vec![key], self.key.identity_id()) {
                    Ok(_) => {
                        done(id_hint, Outcome::Success);
                        Ok(())
                    }
                    Err(e) => fail_or_unreachable(e, id_hint, done),
                }
            }
        }
    }
}

impl Drop for NetworkTarget {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.dispatcher.take() {
            let _ = h.join();
        }
    }
}
