use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use log::info;
use parking_lot::Mutex;

use crate::config::{Mode, WorkloadConfig};
use crate::metrics::{aggregate, TxObservation};
use crate::report::BenchmarkReport;
use crate::target::{Completion, Target};
use crate::BenchError;

/// A run with no completion for this long is abandoned.
const STALL_TIMEOUT: Duration = Duration::from_secs(60);

pub fn run(config: &WorkloadConfig, target: &dyn Target) -> Result<BenchmarkReport, BenchError> {
    match config.mode {
        Mode::FixedLoad => run_fixed_load(config, target),
        Mode::FixedRate => run_fixed_rate(config, target),
    }
}

/// State shared by the issuing threads of one run.
struct Run {
    start: Instant,
    total: u64,
    next: AtomicU64,
    in_flight: Arc<AtomicU64>,
    max_in_flight: AtomicU64,
    abort: AtomicBool,
    error: Mutex<Option<BenchError>>,
    observations: Sender<TxObservation>,
}

impl Run {
    fn new(total: u64) -> (Arc<Run>, Receiver<TxObservation>) {
        let (tx, rx) = crossbeam_channel::unbounded();
        let run = Run {
            start: Instant::now(),
            total,
            next: AtomicU64::new(0),
            in_flight: Arc::new(AtomicU64::new(0)),
            max_in_flight: AtomicU64::new(0),
            abort: AtomicBool::new(false),
            error: Mutex::new(None),
            observations: tx,
        };
        (Arc::new(run), rx)
    }

    /// Claims the next index from the shared budget.
    fn claim(&self) -> Option<u64> {
        if self.abort.load(Ordering::Acquire) {
            return None;
        }
        let i = self.next.fetch_add(1, Ordering::AcqRel);
        (i < self.total).then_some(i)
    }

    /// Issues `index`; `after` runs once the outcome is recorded.
    fn issue(&self, target: &dyn Target, config: &WorkloadConfig, index: u64, after: impl FnOnce() + Send + 'static) {
        let now_in = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now_in, Ordering::SeqCst);
        let start = self.start;
        let issued_at = start.elapsed();
        let in_flight = self.in_flight.clone();
        let sink = self.observations.clone();
        let done: Completion = Box::new(move |tx_id, outcome| {
            let completed_at = start.elapsed();
            in_flight.fetch_sub(1, Ordering::SeqCst);
            let _ = sink.send(TxObservation { tx_id, issued_at, completed_at, outcome });
            after();
        });
        if let Err(e) = target.issue(config.operation, index, done) {
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            self.error.lock().get_or_insert(e);
            self.abort.store(true, Ordering::Release);
        }
    }

    fn collect(&self, rx: &Receiver<TxObservation>) -> Result<Vec<TxObservation>, BenchError> {
        let mut out = Vec::with_capacity(self.total as usize);
        let mut last_progress = Instant::now();
        while (out.len() as u64) < self.total {
            if self.abort.load(Ordering::Acquire) {
                break;
            }
            match rx.recv_timeout(Duration::from_millis(50)) {
                Ok(o) => {
                    out.push(o);
                    last_progress = Instant::now();
                }
                Err(RecvTimeoutError::Timeout) if last_progress.elapsed() < STALL_TIMEOUT => {}
                Err(_) => {
                    self.abort.store(true, Ordering::Release);
                    return Err(BenchError::TargetUnreachable(format!(
                        "no completion for {}s with {} of {} done",
                        STALL_TIMEOUT.as_secs(),
                        out.len(),
                        self.total
                    )));
                }
            }
        }
        if let Some(e) = self.error.lock().take() {
            return Err(e);
        }
        Ok(out)
    }

    fn report(&self, config: &WorkloadConfig, observations: &[TxObservation]) -> Result<BenchmarkReport, BenchError> {
        let metrics = aggregate(observations)?;
        let report =
            BenchmarkReport { config: config.clone(), metrics, max_in_flight: self.max_in_flight.load(Ordering::SeqCst) };
        info!(
            "{}: {} ok / {} failed, {:.1} tps, avg latency {:.3}s",
            config.name, report.metrics.success, report.metrics.fail, report.metrics.throughput_tps, report.metrics.latency_avg_s
        );
        Ok(report)
    }
}

fn check_mode(config: &WorkloadConfig, mode: Mode) -> Result<(), BenchError> {
    config.validate()?;
    if config.mode != mode {
        return Err(BenchError::InvalidConfig(format!("{}: expected {mode:?}, got {:?}", config.name, config.mode)));
    }
    Ok(())
}

/// Closed loop: `load` clients each keep one transaction outstanding, so a
/// new one is issued whenever one completes, until `total_tx` are issued.
pub fn run_fixed_load(config: &WorkloadConfig, target: &dyn Target) -> Result<BenchmarkReport, BenchError> {
    check_mode(config, Mode::FixedLoad)?;
    target.prepare(config)?;
    let load = config.load.expect("validated") as usize;
    let (run, rx) = Run::new(config.total_tx);
    let clients = load.min(config.total_tx as usize);
    let observations = std::thread::scope(|s| {
        for _ in 0..clients {
            let run = &run;
            s.spawn(move || {
                let (free, wait) = crossbeam_channel::bounded::<()>(1);
                while let Some(i) = run.claim() {
                    let free = free.clone();
                    run.issue(target, config, i, move || {
                        let _ = free.send(());
                    });
                    // Returns early on abort so the scope can end.
                    while wait.recv_timeout(Duration::from_millis(50)).is_err() {
                        if run.abort.load(Ordering::Acquire) {
                            return;
                        }
                    }
                }
            });
        }
        let out = run.collect(&rx);
        run.abort.store(true, Ordering::Release);
        out
    })?;
    run.report(config, &observations)
}

/// Open loop: transaction `i` is issued at `start + i / rate_tps`, whatever
/// the completions are doing. `workers` threads share the schedule; when
/// they fall behind, the achieved send rate drops below the configured one.
pub fn run_fixed_rate(config: &WorkloadConfig, target: &dyn Target) -> Result<BenchmarkReport, BenchError> {
    check_mode(config, Mode::FixedRate)?;
    target.prepare(config)?;
    let rate = config.rate_tps.expect("validated");
    let (run, rx) = Run::new(config.total_tx);
    let observations = std::thread::scope(|s| {
        for _ in 0..config.workers {
            let run = &run;
            s.spawn(move || {
                while let Some(i) = run.claim() {
                    let due = run.start + Duration::from_secs_f64(i as f64 / rate);
                    let now = Instant::now();
                    if due > now {
                        std::thread::sleep(due - now);
                    }
                    run.issue(target, config, i, || {});
                }
            });
        }
        let out = run.collect(&rx);
        run.abort.store(true, Ordering::Release);
        out
    })?;
    run.report(config, &observations)
}
