//! Per-batch run logs and their CSV export.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Extra state logged by the linear-bandit algorithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearBatchInfo {
    /// Number of pulls `N_r` handed to the rounding procedure.
    pub total_pulls: u64,
    /// Design weights over all arms for this batch.
    pub design: Vec<f64>,
    /// Design value of the surviving difference set.
    pub rho: f64,
    /// Least-squares estimate fitted on this batch's samples.
    pub theta_hat: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    /// 1-based batch index.
    pub batch: usize,
    /// Per-arm budget `L_r` used by this batch.
    pub budget: f64,
    /// Budget computed for the following batch, if one was computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_budget: Option<f64>,
    pub pulls_per_arm: BTreeMap<usize, u64>,
    pub empirical_means: BTreeMap<usize, f64>,
    pub gap_estimates: BTreeMap<usize, f64>,
    pub eliminated: Vec<usize>,
    pub survivors: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearBatchInfo>,
}

impl BatchRecord {
    pub fn total_pulls(&self) -> u64 {
        self.pulls_per_arm.values().fold(0u64, |a, &b| a.saturating_add(b))
    }

    /// Arms alive at the start of the batch.
    pub fn active(&self) -> BTreeSet<usize> {
        self.eliminated
            .iter()
            .chain(self.survivors.iter())
            .copied()
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub batches: Vec<BatchRecord>,
    /// The surviving arm; `None` when the run stopped early.
    pub returned_arm: Option<usize>,
    pub total_samples: u64,
    pub total_batches: usize,
    pub seed: u64,
    /// Whether `returned_arm` is the true best arm, when the truth is known.
    pub success: Option<bool>,
}

impl RunTrace {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub(crate) fn push(&mut self, record: BatchRecord) {
        self.total_samples = self.total_samples.saturating_add(record.total_pulls());
        self.total_batches += 1;
        self.batches.push(record);
    }

    pub(crate) fn finish(&mut self, returned: usize, truth: Option<usize>) {
        self.returned_arm = Some(returned);
        self.success = truth.map(|best| best == returned);
    }

    /// Checks the structural invariants of a trace over `num_arms` arms.
    pub fn validate(&self, num_arms: usize) -> std::result::Result<(), String> {
        let mut alive: BTreeSet<usize> = (0..num_arms).collect();
        for (k, b) in self.batches.iter().enumerate() {
            if b.batch != k + 1 {
                return Err(format!("batch {} recorded at position {k}", b.batch));
            }
            if b.active() != alive {
                return Err(format!("batch {}: active set mismatch", b.batch));
            }
            if b.eliminated.iter().any(|a| b.survivors.contains(a)) {
                return Err(format!("batch {}: eliminated arm survived", b.batch));
            }
            if b.survivors.is_empty() {
                return Err(format!("batch {}: no survivors", b.batch));
            }
            alive = b.survivors.iter().copied().collect();
        }
        let samples: u64 = self.batches.iter().map(BatchRecord::total_pulls).sum();
        if samples != self.total_samples {
            return Err(format!(
                "total_samples {} != sum of batches {samples}",
                self.total_samples
            ));
        }
        if self.total_batches != self.batches.len() {
            return Err("total_batches does not match batch count".into());
        }
        if let Some(arm) = self.returned_arm {
            if alive.len() != 1 || !alive.contains(&arm) {
                return Err(format!("returned arm {arm} is not the sole survivor"));
            }
        }
        Ok(())
    }

    /// Appends one CSV row per batch. Linear traces get three extra columns.
    pub fn write_csv_rows<W: Write>(&self, writer: &mut csv::Writer<W>, run_id: &str) -> Result<()> {
        for b in &self.batches {
            let mut row = vec![
                run_id.to_string(),
                b.batch.to_string(),
                b.budget.to_string(),
                b.total_pulls().to_string(),
                b.eliminated.len().to_string(),
                b.survivors.len().to_string(),
            ];
            if let Some(lin) = &b.linear {
                row.push(lin.total_pulls.to_string());
                row.push(lin.rho.to_string());
                row.push(
                    lin.theta_hat
                        .iter()
                        .map(f64::to_string)
                        .collect::<Vec<_>>()
                        .join(";"),
                );
            }
            writer.write_record(&row)?;
        }
        Ok(())
    }
}

pub const TRACE_CSV_HEADER: [&str; 6] = [
    "run_id",
    "batch",
    "L_r",
    "pulls_per_arm_total",
    "eliminated_count",
    "survivors",
];

pub const LINEAR_TRACE_CSV_EXTRA: [&str; 3] = ["N_r", "rho_r", "theta_hat"];

/// Header row for trace CSV files.
pub fn trace_csv_header(linear: bool) -> Vec<&'static str> {
    let mut header = TRACE_CSV_HEADER.to_vec();
    if linear {
        header.extend(LINEAR_TRACE_CSV_EXTRA);
    }
    header
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(batch: usize, eliminated: Vec<usize>, survivors: Vec<usize>) -> BatchRecord {
        let active: Vec<usize> = eliminated.iter().chain(&survivors).copied().collect();
        BatchRecord {
            batch,
            budget: 4.0,
            next_budget: Some(16.0),
            pulls_per_arm: active.iter().map(|&a| (a, 3)).collect(),
            empirical_means: BTreeMap::new(),
            gap_estimates: BTreeMap::new(),
            eliminated,
            survivors,
            linear: None,
        }
    }

    #[test]
    fn validate_accepts_consistent_trace() {
        let mut t = RunTrace::new(1);
        t.push(record(1, vec![2], vec![0, 1]));
        t.push(record(2, vec![1], vec![0]));
        t.finish(0, Some(0));
        assert_eq!(t.total_samples, 9 + 6);
        assert_eq!(t.validate(3), Ok(()));
        assert_eq!(t.success, Some(true));
    }

    #[test]
    fn validate_rejects_resurrected_arm() {
        let mut t = RunTrace::new(1);
        t.push(record(1, vec![2], vec![0, 1]));
        t.push(record(2, vec![2], vec![0, 1]));
        assert!(t.validate(3).is_err());
    }

    #[test]
    fn csv_rows_follow_header() {
        let mut t = RunTrace::new(1);
        t.push(record(1, vec![1], vec![0]));
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(trace_csv_header(false)).unwrap();
        t.write_csv_rows(&mut w, "run0").unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(
            text,
            "run_id,batch,L_r,pulls_per_arm_total,eliminated_count,survivors\nrun0,1,4,6,1,1\n"
        );
    }
}
