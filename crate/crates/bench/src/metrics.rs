use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Fail(String),
}

/// One transaction as seen by the driver. Instants are offsets from the
/// start of the run on a monotonic clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxObservation {
    pub tx_id: String,
    pub issued_at: Duration,
    pub completed_at: Duration,
    pub outcome: Outcome,
}

impl TxObservation {
    pub fn latency(&self) -> Duration {
        self.completed_at.saturating_sub(self.issued_at)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub issued: u64,
    pub success: u64,
    pub fail: u64,
    pub fail_reasons: BTreeMap<String, u64>,
    /// First issue to last completion.
    pub window_s: f64,
    pub actual_send_rate_tps: f64,
    pub throughput_tps: f64,
    /// Latency over successful transactions; zero when there are none.
    pub latency_min_s: f64,
    pub latency_max_s: f64,
    pub latency_avg_s: f64,
}

/// Spans shorter than the clock resolution are treated as this long.
const MIN_SPAN_S: f64 = 1e-6;

pub fn aggregate(observations: &[TxObservation]) -> Result<Metrics, BenchError> {
    let first_issue = observations.iter().map(|o| o.issued_at).min().ok_or(BenchError::EmptyObservations)?;
    let last_issue = observations.iter().map(|o| o.issued_at).max().unwrap_or(first_issue);
    let last_completion = observations.iter().map(|o| o.completed_at).max().unwrap_or(first_issue);
    let window_s = last_completion.saturating_sub(first_issue).as_secs_f64();

    let mut m = Metrics { issued: observations.len() as u64, window_s, ..Metrics::default() };
    let mut latencies = Vec::new();
    for o in observations {
        match &o.outcome {
            Outcome::Success => {
                m.success += 1;
                latencies.push(o.latency().as_secs_f64());
            }
            Outcome::Fail(reason) => {
                m.fail += 1;
                *m.fail_reasons.entry(reason.clone()).or_default() += 1;
            }
        }
    }
    // With a single issue instant the send span collapses; fall back to the
    // full window so the rate stays finite and above throughput.
    let send_span = last_issue.saturating_sub(first_issue).as_secs_f64();
    let send_span = if send_span > 0.0 { send_span } else { window_s };
    m.actual_send_rate_tps = m.issued as f64 / send_span.max(MIN_SPAN_S);
    m.throughput_tps = m.success as f64 / window_s.max(MIN_SPAN_S);
    if !latencies.is_empty() {
        m.latency_min_s = latencies.iter().copied().fold(f64::INFINITY, f64::min);
        m.latency_max_s = latencies.iter().copied().fold(0.0, f64::max);
        m.latency_avg_s = latencies.iter().sum::<f64>() / latencies.len() as f64;
    }
    Ok(m)
}
