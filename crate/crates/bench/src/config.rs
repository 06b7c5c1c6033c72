use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operation {
    CreateRecord,
    ReadRecord,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    FixedLoad,
    FixedRate,
}

fn default_workers() -> u32 {
    4
}

/// One benchmark round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub name: String,
    pub operation: Operation,
    pub mode: Mode,
    /// In-flight target, fixed-load only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load: Option<u32>,
    /// Configured send rate, fixed-rate only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_tps: Option<f64>,
    pub total_tx: u64,
    #[serde(default = "default_workers")]
    pub workers: u32,
    #[serde(default)]
    pub seed: u64,
}

impl WorkloadConfig {
    pub fn fixed_load(name: &str, operation: Operation, load: u32, total_tx: u64) -> Self {
        WorkloadConfig {
            name: name.into(),
            operation,
            mode: Mode::FixedLoad,
            load: Some(load),
            rate_tps: None,
            total_tx,
            workers: default_workers(),
            seed: 0,
        }
    }

    pub fn fixed_rate(name: &str, operation: Operation, rate_tps: f64, total_tx: u64) -> Self {
        WorkloadConfig {
            name: name.into(),
            operation,
            mode: Mode::FixedRate,
            load: None,
            rate_tps: Some(rate_tps),
            total_tx,
            workers: default_workers(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidConfig(format!("{}: {m}", self.name)));
        if self.total_tx == 0 {
            return bad("total_tx must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        match self.mode {
            Mode::FixedLoad => {
                if self.rate_tps.is_some() {
                    return bad("rate_tps is not used in fixed-load mode");
                }
                match self.load {
                    Some(l) if l > 0 => {}
                    _ => return bad("fixed-load needs a positive load"),
                }
            }
            Mode::FixedRate => {
                if self.load.is_some() {
                    return bad("load is not used in fixed-rate mode");
                }
                match self.rate_tps {
                    Some(r) if r.is_finite() && r > 0.0 => {}
                    _ => return bad("fixed-rate needs a positive rate_tps"),
                }
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WorkloadFile {
    One(WorkloadConfig),
    Many(Vec<WorkloadConfig>),
    Rounds { rounds: Vec<WorkloadConfig> },
}

/// Reads a YAML or JSON file holding one workload, a list, or `{rounds: [...]}`.
/// Every workload is validated.
pub fn load_workloads(path: &Path) -> Result<Vec<WorkloadConfig>, BenchError> {
    let text = std::fs::read_to_string(path)?;
    let file: WorkloadFile = serde_yaml::from_str(&text).map_err(|e| BenchError::Encoding(e.to_string()))?;
    let list = match file {
        WorkloadFile::One(w) => vec![w],
        WorkloadFile::Many(v) | WorkloadFile::Rounds { rounds: v } => v,
    };
    for w in &list {
        w.validate()?;
    }
    Ok(list)
}
