//! Benchmark matrix: each solver configuration (and optionally SGD) trained
//! for a fixed number of epochs on the same split, with phase totals, cost
//! estimates and RMSE trajectories collected per configuration.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::als::{train, AlsConfig, TrainOutput};
use crate::data::{RatingTriple, SparseRatings};
use crate::error::{Error, Result};
use crate::gram::{RooflineEstimate, TileConfig};
use crate::report::PhaseTimes;
use crate::sgd::{sgd_train, SgdConfig};
use crate::solvers::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub f: usize,
    pub lambda: f32,
    pub epochs: usize,
    pub solvers: Vec<SolverConfig>,
    /// Adds an SGD row using `sgd` (its `f`, `lambda`, `epochs` and `seed`
    /// are overridden by the fields above).
    pub sgd: Option<SgdConfig>,
    /// RMSE threshold for epochs-to-threshold.
    pub threshold: Option<f64>,
    pub threads: usize,
    pub seed: u64,
    pub tile: TileConfig,
    pub phase_detail: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            f: 100,
            lambda: 0.05,
            epochs: 10,
            solvers: vec![SolverConfig::exact(), SolverConfig::cg(6), SolverConfig::cg_half(6)],
            sgd: None,
            threshold: None,
            threads: 0,
            seed: 0,
            tile: TileConfig::default(),
            phase_detail: true,
        }
    }
}

impl BenchConfig {
    pub fn als_config(&self, solver: SolverConfig) -> AlsConfig {
        AlsConfig {
            f: self.f,
            lambda: self.lambda,
            epochs: self.epochs,
            solver,
            seed: self.seed,
            tile: self.tile,
            threads: self.threads,
            phase_detail: self.phase_detail,
            ..AlsConfig::default()
        }
    }

    pub fn sgd_config(&self) -> Option<SgdConfig> {
        self.sgd.clone().map(|s| SgdConfig {
            f: self.f,
            lambda: self.lambda,
            epochs: self.epochs,
            seed: self.seed,
            ..s
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    /// `engine/solver`, e.g. `als/cg-fp16`.
    pub key: String,
    pub engine: String,
    pub solver: String,
    pub epochs_run: usize,
    /// Summed over epochs.
    pub phases: PhaseTimes,
    pub epoch_seconds: Vec<f64>,
    pub hermitian_flops: f64,
    pub solve_flops: f64,
    pub solve_bytes: f64,
    pub sgd_flops: f64,
    pub sgd_bytes: f64,
    pub cg_iterations: usize,
    pub rmse_trajectory: Vec<f64>,
    pub final_rmse: Option<f64>,
    pub epochs_to_threshold: Option<usize>,
}

impl BenchRow {
    fn from_output(out: &TrainOutput, threshold: Option<f64>) -> Self {
        let r = &out.report;
        let first = r.epochs.first();
        let engine = first.map(|e| e.engine.clone()).unwrap_or_default();
        let solver = first.map(|e| e.solver.clone()).unwrap_or_default();
        let sum = |g: fn(&crate::report::EpochRecord) -> f64| r.epochs.iter().map(g).sum::<f64>();
        BenchRow {
            key: format!("{engine}/{solver}"),
            engine,
            solver,
            epochs_run: r.epochs_run(),
            phases: r.total_phases(),
            epoch_seconds: r.epochs.iter().map(|e| e.phases.total()).collect(),
            hermitian_flops: sum(|e| e.hermitian_flops),
            solve_flops: sum(|e| e.solve_flops),
            solve_bytes: sum(|e| e.solve_bytes),
            sgd_flops: sum(|e| e.sgd_flops),
            sgd_bytes: sum(|e| e.sgd_bytes),
            cg_iterations: r.epochs.iter().map(|e| e.cg_iterations).sum(),
            rmse_trajectory: r.rmse_trajectory(),
            final_rmse: r.final_rmse(),
            epochs_to_threshold: threshold.and_then(|t| r.epochs_to_threshold(t)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub roofline: RooflineEstimate,
    pub threshold: Option<f64>,
}

#[derive(Serialize)]
struct RowLine<'a> {
    record: &'static str,
    #[serde(flatten)]
    row: &'a BenchRow,
}

#[derive(Serialize)]
struct RooflineLine<'a> {
    record: &'static str,
    #[serde(flatten)]
    roofline: &'a RooflineEstimate,
    cg_flop_ratio: f64,
    sgd_intensity: f64,
}

impl BenchReport {
    pub fn row(&self, key: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.key == key)
    }

    /// One `"record": "bench"` line per configuration, then one
    /// `"record": "roofline"` line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for row in &self.rows {
            serde_json::to_writer(&mut w, &RowLine { record: "bench", row }).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        let line = RooflineLine {
            record: "roofline",
            roofline: &self.roofline,
            cg_flop_ratio: self.roofline.cg_flop_ratio(),
            sgd_intensity: self.roofline.sgd_intensity(),
        };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<18} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>12} {:>10} {:>10}",
            "config", "epochs", "hermitian", "bias", "solve", "update", "eval", "total", "solve_gflop", "rmse", "to_thresh"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<18} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>12.3} {:>10} {:>10}",
                r.key,
                r.epochs_run,
                r.phases.hermitian,
                r.phases.bias,
                r.phases.solve,
                r.phases.update,
                r.phases.eval,
                r.phases.total(),
                r.solve_flops / 1e9,
                r.final_rmse.map_or("-".to_string(), |v| format!("{v:.5}")),
                r.epochs_to_threshold.map_or("-".to_string(), |v| v.to_string()),
            );
        }
        let _ = writeln!(
            s,
            "roofline: cg/exact solve flop ratio {:.3}, sgd intensity {:.3} flop/word",
            self.roofline.cg_flop_ratio(),
            self.roofline.sgd_intensity()
        );
        s
    }
}

pub fn run_bench(train_set: &SparseRatings, test: &[RatingTriple], cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.solvers.is_empty() && cfg.sgd.is_none() {
        return Err(Error::InvalidArgument("bench needs at least one configuration".into()));
    }
    let mut rows = Vec::new();
    for &solver in &cfg.solvers {
        let out = train(train_set, test, &cfg.als_config(solver))?;
        rows.push(BenchRow::from_output(&out, cfg.threshold));
    }
    if let Some(sgd) = cfg.sgd_config() {
        let out = sgd_train(train_set, test, &sgd)?;
        rows.push(BenchRow::from_output(&out, cfg.threshold));
    }
    let cg_iters = cfg.solvers.iter().map(|s| s.cg_iters).max().unwrap_or(0);
    Ok(BenchReport {
        rows,
        roofline: crate::gram::roofline_estimate(train_set.m(), train_set.n(), train_set.nnz(), cfg.f, cg_iters),
        threshold: cfg.threshold,
    })
}
