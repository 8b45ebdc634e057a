//! Per-epoch training records, shared by every engine.
//!
//! Serialized as line-delimited JSON: one `"record": "epoch"` object per
//! completed epoch followed by one `"record": "summary"` object.

use std::io::Write;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gram::HermitianTimings;

/// Wall-clock seconds per phase of one epoch. The `hermitian_*` sub-phases
/// are summed worker time and are zero unless phase detail is enabled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub hermitian: f64,
    pub hermitian_stage: f64,
    pub hermitian_accumulate: f64,
    pub hermitian_store: f64,
    pub bias: f64,
    pub solve: f64,
    /// SGD sample updates.
    pub update: f64,
    pub eval: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.hermitian + self.bias + self.solve + self.update + self.eval
    }

    pub(crate) fn add_hermitian_detail(&mut self, t: &HermitianTimings) {
        self.hermitian_stage += t.stage.as_secs_f64();
        self.hermitian_accumulate += t.accumulate.as_secs_f64();
        self.hermitian_store += t.store.as_secs_f64();
    }
}

impl std::ops::AddAssign for PhaseTimes {
    fn add_assign(&mut self, o: Self) {
        self.hermitian += o.hermitian;
        self.hermitian_stage += o.hermitian_stage;
        self.hermitian_accumulate += o.hermitian_accumulate;
        self.hermitian_store += o.hermitian_store;
        self.bias += o.bias;
        self.solve += o.solve;
        self.update += o.update;
        self.eval += o.eval;
    }
}

pub(crate) fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    TargetRmse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub engine: String,
    /// Solver label (`exact-fp32`, `cg-fp32`, `cg-fp16`) or `sgd-serial` / `sgd-hogwild`.
    pub solver: String,
    /// Training objective after the full epoch.
    pub train_objective: f64,
    /// Objective after update-X, when half-update tracking is on.
    pub objective_after_x: Option<f64>,
    pub test_rmse: Option<f64>,
    /// Mean percentile rank on the test set (implicit engine only).
    pub test_mpr: Option<f64>,
    pub phases: PhaseTimes,
    pub hermitian_flops: f64,
    pub hermitian_bytes: f64,
    pub solve_flops: f64,
    pub solve_bytes: f64,
    pub sgd_flops: f64,
    pub sgd_bytes: f64,
    pub cg_iterations: usize,
    pub cg_breakdowns: usize,
    pub learning_rate: Option<f32>,
}

impl EpochRecord {
    pub(crate) fn new(epoch: usize, engine: &str, solver: &str) -> Self {
        EpochRecord {
            epoch,
            engine: engine.to_string(),
            solver: solver.to_string(),
            train_objective: 0.0,
            objective_after_x: None,
            test_rmse: None,
            test_mpr: None,
            phases: PhaseTimes::default(),
            hermitian_flops: 0.0,
            hermitian_bytes: 0.0,
            solve_flops: 0.0,
            solve_bytes: 0.0,
            sgd_flops: 0.0,
            sgd_bytes: 0.0,
            cg_iterations: 0,
            cg_breakdowns: 0,
            learning_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// Rows of X with no ratings (kept at their initial values).
    pub empty_rows: usize,
    /// Rows of Θ with no ratings (kept at their initial values).
    pub empty_cols: usize,
}

#[derive(Serialize)]
struct EpochLine<'a> {
    record: &'static str,
    #[serde(flatten)]
    epoch: &'a EpochRecord,
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    record: &'static str,
    epochs_run: usize,
    stop_reason: StopReason,
    final_test_rmse: Option<f64>,
    final_train_objective: Option<f64>,
    empty_rows: usize,
    empty_cols: usize,
    total_seconds: f64,
    engine: Option<&'a str>,
    solver: Option<&'a str>,
}

impl TrainReport {
    pub(crate) fn new() -> Self {
        TrainReport {
            epochs: Vec::new(),
            stop_reason: StopReason::MaxEpochs,
            empty_rows: 0,
            empty_cols: 0,
        }
    }

    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }

    pub fn final_rmse(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.test_rmse)
    }

    pub fn rmse_trajectory(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.test_rmse).collect()
    }

    /// First epoch (1-based) whose test RMSE is at or below `threshold`.
    pub fn epochs_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.epochs
            .iter()
            .find(|e| e.test_rmse.is_some_and(|r| r <= threshold))
            .map(|e| e.epoch)
    }

    pub fn total_phases(&self) -> PhaseTimes {
        let mut t = PhaseTimes::default();
        for e in &self.epochs {
            t += e.phases;
        }
        t
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut w, &EpochLine { record: "epoch", epoch: e }).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        let last = self.epochs.last();
        let summary = SummaryLine {
            record: "summary",
            epochs_run: self.epochs_run(),
            stop_reason: self.stop_reason,
            final_test_rmse: self.final_rmse(),
            final_train_objective: last.map(|e| e.train_objective),
            empty_rows: self.empty_rows,
            empty_cols: self.empty_cols,
            total_seconds: self.total_phases().total(),
            engine: last.map(|e| e.engine.as_str()),
            solver: last.map(|e| e.solver.as_str()),
        };
        serde_json::to_writer(&mut w, &summary).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_has_one_line_per_epoch_plus_summary() {
        let mut r = TrainReport::new();
        for k in 1..=3 {
            let mut e = EpochRecord::new(k, "als", "cg-fp32");
            e.test_rmse = Some(1.0 / k as f64);
            r.epochs.push(e);
        }
        let mut buf = Vec::new();
        r.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0]["record"], "epoch");
        assert_eq!(lines[0]["phases"]["solve"], 0.0);
        assert_eq!(lines[3]["record"], "summary");
        assert_eq!(lines[3]["epochs_run"], 3);
        assert_eq!(r.epochs_to_threshold(0.5), Some(2));
        assert_eq!(r.epochs_to_threshold(0.1), None);
    }
}
