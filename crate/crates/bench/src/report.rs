use serde::{Deserialize, Serialize};

use crate::config::{Mode, WorkloadConfig};
use crate::metrics::Metrics;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: WorkloadConfig,
    #[serde(flatten)]
    pub metrics: Metrics,
    /// Highest in-flight count seen by the issuing side.
    pub max_in_flight: u64,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn setting(&self) -> String {
        match self.config.mode {
            Mode::FixedLoad => self.config.load.unwrap_or_default().to_string(),
            Mode::FixedRate => format!("{:.1}", self.config.rate_tps.unwrap_or_default()),
        }
    }
}

/// Aligned text table, one row per report.
pub fn render_table(reports: &[BenchmarkReport]) -> String {
    let modes: Vec<Mode> = reports.iter().map(|r| r.config.mode).collect();
    let setting = if modes.iter().all(|m| *m == Mode::FixedLoad) {
        "Transaction Load"
    } else if modes.iter().all(|m| *m == Mode::FixedRate) {
        "Configured Send Rate (TPS)"
    } else {
        "Load / Configured Send Rate"
    };
    let header = [
        "Name",
        setting,
        "Achieved Send Rate (TPS)",
        "Max Latency (s)",
        "Min Latency (s)",
        "Avg Latency (s)",
        "Throughput (TPS)",
    ];
    let rows: Vec<[String; 7]> = reports
        .iter()
        .map(|r| {
            let m = &r.metrics;
            [
                r.config.name.clone(),
                r.setting(),
                format!("{:.1}", m.actual_send_rate_tps),
                format!("{:.2}", m.latency_max_s),
                format!("{:.2}", m.latency_min_s),
                format!("{:.2}", m.latency_avg_s),
                format!("{:.1}", m.throughput_tps),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[&str]| {
        let mut out = String::new();
        for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
            if i == 0 {
                out.push_str(&format!("{cell:<w$}"));
            } else {
                out.push_str(&format!(" | {cell:>w$}"));
            }
        }
        out.trim_end().to_string() + "\n"
    };
    let mut out = line(&header);
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    out.push('\n');
    for row in &rows {
        out.push_str(&line(&row.iter().map(String::as_str).collect::<Vec<_>>()));
    }
    out
}
