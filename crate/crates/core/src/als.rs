//! Explicit-feedback ALS with weighted-λ regularization.
//!
//! Each epoch runs update-X over the CSR view with Θ fixed, then update-Θ
//! over the CSC view with X fixed, then evaluates. A half-update walks its
//! rows in chunks; inside a chunk the three phases (assemble `A_u`, form
//! `b_u`, solve) run back to back across the worker pool so their wall
//! times can be reported separately.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CompressedView, RatingTriple, SparseRatings};
use crate::error::{Error, Result};
use crate::factors::{init_factors, FactorMatrix};
use crate::gram::{
    bias_into, roofline_estimate, GramAssembler, GramSystem, HermitianTimings, Precision,
    Regularization, RooflineEstimate, SymMatrix, TileConfig,
};
use crate::linalg::{derive_seed, dot_f64};
use crate::parallel::{ordered_sum, with_threads};
use crate::report::{secs, EpochRecord, PhaseTimes, StopReason, TrainReport};
use crate::solvers::{batch_solve_rows, BatchStats, SolverConfig, SolverMethod};

pub(crate) const X_INIT_STREAM: u64 = 11;
pub(crate) const THETA_INIT_STREAM: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlsConfig {
    pub f: usize,
    pub lambda: f32,
    pub epochs: usize,
    pub solver: SolverConfig,
    pub init_scale: f32,
    pub seed: u64,
    /// Stop once test RMSE reaches this value.
    pub target_rmse: Option<f64>,
    pub regularization: Regularization,
    pub tile: TileConfig,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
    /// Rows per assemble/solve chunk.
    pub chunk_rows: usize,
    /// Time the stage/accumulate/store sub-phases of assembly.
    pub phase_detail: bool,
    /// Also evaluate the objective between update-X and update-Θ.
    pub track_half_objective: bool,
}

impl Default for AlsConfig {
    fn default() -> Self {
        AlsConfig {
            f: 100,
            lambda: 0.05,
            epochs: 10,
            solver: SolverConfig::default(),
            init_scale: 0.1,
            seed: 0,
            target_rmse: None,
            regularization: Regularization::Weighted,
            tile: TileConfig::default(),
            threads: 0,
            chunk_rows: 1024,
            phase_detail: false,
            track_half_objective: false,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f == 0 {
            return Err(Error::InvalidArgument("f must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.chunk_rows == 0 {
            return Err(Error::InvalidArgument("chunk_rows must be at least 1".into()));
        }
        TileConfig::new(self.tile.tile, self.tile.batch)?;
        self.solver.validate()
    }

    pub fn side_options(&self) -> SideOptions {
        SideOptions {
            lambda: self.lambda,
            regularization: self.regularization,
            solver: self.solver,
            tile: self.tile,
            chunk_rows: self.chunk_rows,
            phase_detail: self.phase_detail,
        }
    }
}

/// Settings shared by the half-updates of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideOptions {
    pub lambda: f32,
    pub regularization: Regularization,
    pub solver: SolverConfig,
    pub tile: TileConfig,
    pub chunk_rows: usize,
    pub phase_detail: bool,
}

impl Default for SideOptions {
    fn default() -> Self {
        AlsConfig::default().side_options()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SideStats {
    pub phases: PhaseTimes,
    pub solve: BatchStats,
    pub empty: usize,
}

impl std::ops::AddAssign for SideStats {
    fn add_assign(&mut self, o: Self) {
        self.phases += o.phases;
        self.solve += o.solve;
        self.empty += o.empty;
    }
}

pub(crate) fn check_side(view: &CompressedView<'_>, fixed: &FactorMatrix, target: &FactorMatrix) -> Result<()> {
    if view.lanes() != target.rows() || view.inner_dim != fixed.rows() || fixed.f() != target.f() {
        return Err(Error::DimensionMismatch(format!(
            "view {}x{} vs target {}x{} and fixed {}x{}",
            view.lanes(),
            view.inner_dim,
            target.rows(),
            target.f(),
            fixed.rows(),
            fixed.f()
        )));
    }
    Ok(())
}

/// One half-update: for every lane `u` with at least one rating, replaces
/// row `u` of `target` with the solution of `A_u x = b_u`; the current row
/// is the CG warm start. Lanes without ratings are left unchanged.
pub fn update_side(
    view: CompressedView<'_>,
    fixed: &FactorMatrix,
    target: &mut FactorMatrix,
    opts: &SideOptions,
) -> Result<SideStats> {
    check_side(&view, fixed, target)?;
    opts.solver.validate()?;
    let f = fixed.f();
    let rows = view.lanes();
    let mut stats = SideStats::default();

    for start in (0..rows).step_by(opts.chunk_rows.max(1)) {
        let end = (start + opts.chunk_rows).min(rows);

        let t = Instant::now();
        let assembled: Vec<(Result<SymMatrix>, HermitianTimings)> = (start..end)
            .into_par_iter()
            .map_init(
                || GramAssembler::new(f, opts.tile, opts.phase_detail),
                |asm, u| {
                    let (idx, _) = view.lane(u);
                    let a = asm.hermitian(idx, fixed, opts.lambda, opts.regularization, opts.solver.precision);
                    (a, std::mem::take(&mut asm.timings))
                },
            )
            .collect();
        stats.phases.hermitian += secs(t.elapsed());

        let t = Instant::now();
        let rhs: Vec<Vec<f32>> = (start..end)
            .into_par_iter()
            .map(|u| {
                let (idx, vals) = view.lane(u);
                let mut b = vec![0.0; f];
                bias_into(idx, vals, fixed, &mut b);
                b
            })
            .collect();
        stats.phases.bias += secs(t.elapsed());

        let mut systems = Vec::with_capacity(end - start);
        for ((u, (a, timing)), b) in (start..end).zip(assembled).zip(rhs) {
            stats.phases.add_hermitian_detail(&timing);
            let n_u = view.lane_len(u);
            stats.empty += (n_u == 0) as usize;
            systems.push(GramSystem { a: a?, b, n_u });
        }

        let x = &mut target.as_mut_slice()[start * f..end * f];
        let solved = batch_solve_rows(&systems, x, &opts.solver, start)?;
        stats.phases.solve += secs(solved.elapsed);
        stats.solve += solved;
    }
    Ok(stats)
}

fn check_factors(x: &FactorMatrix, theta: &FactorMatrix, m: usize, n: usize) -> Result<()> {
    if x.rows() != m || theta.rows() != n || x.f() != theta.f() {
        return Err(Error::DimensionMismatch(format!(
            "factors {}x{} and {}x{} do not fit a {m}x{n} rating matrix",
            x.rows(),
            x.f(),
            theta.rows(),
            theta.f()
        )));
    }
    Ok(())
}

/// `Σ (r_uv − x_uᵀθ_v)² + λ(Σ_u n_u‖x_u‖² + Σ_v n_v‖θ_v‖²)`, in f64.
pub fn objective(x: &FactorMatrix, theta: &FactorMatrix, ratings: &SparseRatings, lambda: f32) -> Result<f64> {
    check_factors(x, theta, ratings.m(), ratings.n())?;
    let csr = ratings.csr();
    let csc = ratings.csc();
    let lambda = lambda as f64;
    let rows: Vec<f64> = (0..ratings.m())
        .into_par_iter()
        .map(|u| {
            let (idx, vals) = csr.lane(u);
            let xu = x.row(u);
            let mut s = 0.0;
            for (&v, &r) in idx.iter().zip(vals) {
                let e = r as f64 - dot_f64(xu, theta.row(v as usize));
                s += e * e;
            }
            s + lambda * idx.len() as f64 * dot_f64(xu, xu)
        })
        .collect();
    let cols: Vec<f64> = (0..ratings.n())
        .into_par_iter()
        .map(|v| {
            let t = theta.row(v);
            lambda * csc.lane_len(v) as f64 * dot_f64(t, t)
        })
        .collect();
    Ok(ordered_sum(rows) + ordered_sum(cols))
}

const RMSE_CHUNK: usize = 8192;

/// Root mean squared error of `x_uᵀθ_v` against held-out ratings; predictions
/// are not clamped.
pub fn rmse(x: &FactorMatrix, theta: &FactorMatrix, test: &[RatingTriple]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("RMSE needs a non-empty test set".into()));
    }
    if x.f() != theta.f() {
        return Err(Error::DimensionMismatch("X and Θ disagree on f".into()));
    }
    if let Some(t) = test
        .iter()
        .find(|t| t.user as usize >= x.rows() || t.item as usize >= theta.rows())
    {
        return Err(Error::DimensionMismatch(format!(
            "test rating ({}, {}) outside the {}x{} model",
            t.user,
            t.item,
            x.rows(),
            theta.rows()
        )));
    }
    let parts: Vec<f64> = test
        .par_chunks(RMSE_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|t| {
                    let e = t.rating as f64 - dot_f64(x.row(t.user as usize), theta.row(t.item as usize));
                    e * e
                })
                .sum()
        })
        .collect();
    Ok((ordered_sum(parts) / test.len() as f64).sqrt())
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub x: FactorMatrix,
    pub theta: FactorMatrix,
    pub report: TrainReport,
    pub roofline: RooflineEstimate,
    /// Objective at initialization, recorded when half-update tracking is on.
    pub initial_objective: Option<f64>,
}

pub(crate) fn fill_cost(rec: &mut EpochRecord, est: &RooflineEstimate, solver: &SolverConfig) {
    let (ux, ut) = (&est.update_x, &est.update_theta);
    rec.hermitian_flops = ux.hermitian_flops + ut.hermitian_flops;
    rec.hermitian_bytes = ux.hermitian_bytes + ut.hermitian_bytes;
    match (solver.method, solver.precision) {
        (SolverMethod::Exact, _) => {
            rec.solve_flops = ux.solve_flops_exact + ut.solve_flops_exact;
            rec.solve_bytes = ux.solve_bytes_exact + ut.solve_bytes_exact;
        }
        (SolverMethod::Cg, Precision::Fp32) => {
            rec.solve_flops = ux.solve_flops_cg + ut.solve_flops_cg;
            rec.solve_bytes = ux.solve_bytes_cg_fp32 + ut.solve_bytes_cg_fp32;
        }
        (SolverMethod::Cg, Precision::Fp16) => {
            rec.solve_flops = ux.solve_flops_cg + ut.solve_flops_cg;
            rec.solve_bytes = ux.solve_bytes_cg_fp16 + ut.solve_bytes_cg_fp16;
        }
    }
}

/// Trains X and Θ. `test` may be empty, in which case no RMSE is recorded
/// and `target_rmse` is ignored.
pub fn train(train: &SparseRatings, test: &[RatingTriple], cfg: &AlsConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let x = init_factors(train.m(), cfg.f, cfg.init_scale, derive_seed(cfg.seed, X_INIT_STREAM))?;
    let theta = init_factors(train.n(), cfg.f, cfg.init_scale, derive_seed(cfg.seed, THETA_INIT_STREAM))?;
    train_from(train, test, cfg, x, theta)
}

/// [`train`] starting from the given factors.
pub fn train_from(
    train: &SparseRatings,
    test: &[RatingTriple],
    cfg: &AlsConfig,
    mut x: FactorMatrix,
    mut theta: FactorMatrix,
) -> Result<TrainOutput> {
    cfg.validate()?;
    check_factors(&x, &theta, train.m(), train.n())?;
    if x.f() != cfg.f {
        return Err(Error::DimensionMismatch(format!("factors have f={}, config f={}", x.f(), cfg.f)));
    }
    let opts = cfg.side_options();
    let roofline = roofline_estimate(train.m(), train.n(), train.nnz(), cfg.f, cfg.solver.cg_iters);

    with_threads(cfg.threads, || {
        let mut report = TrainReport::new();
        let initial_objective = if cfg.track_half_objective {
            Some(objective(&x, &theta, train, cfg.lambda)?)
        } else {
            None
        };

        for epoch in 1..=cfg.epochs {
            let mut rec = EpochRecord::new(epoch, "als", cfg.solver.label());
            let mut side = update_side(train.csr(), &theta, &mut x, &opts)?;
            report.empty_rows = side.empty;

            if cfg.track_half_objective {
                let t = Instant::now();
                rec.objective_after_x = Some(objective(&x, &theta, train, cfg.lambda)?);
                rec.phases.eval += secs(t.elapsed());
            }

            let side_theta = update_side(train.csc(), &x, &mut theta, &opts)?;
            report.empty_cols = side_theta.empty;
            side += side_theta;

            let t = Instant::now();
            rec.train_objective = objective(&x, &theta, train, cfg.lambda)?;
            if !test.is_empty() {
                rec.test_rmse = Some(rmse(&x, &theta, test)?);
            }
            side.phases.eval = secs(t.elapsed());
            rec.phases += side.phases;
            rec.cg_iterations = side.solve.cg_iterations;
            rec.cg_breakdowns = side.solve.breakdowns;
            fill_cost(&mut rec, &roofline, &cfg.solver);

            let reached = matches!((cfg.target_rmse, rec.test_rmse), (Some(target), Some(r)) if r <= target);
            report.epochs.push(rec);
            if reached {
                report.stop_reason = StopReason::TargetRmse;
                break;
            }
        }
        Ok(TrainOutput {
            x,
            theta,
            report,
            roofline,
            initial_objective,
        })
    })?
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(lambda: f32, solver: SolverConfig) -> SideOptions {
        SideOptions {
            lambda,
            solver,
            ..SideOptions::default()
        }
    }

    #[test]
    fn scalar_normal_equation() {
        let r = SparseRatings::build(&[RatingTriple::new(0, 0, 2.0)], 1, 1).unwrap();
        let theta = FactorMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let mut x = FactorMatrix::zeros(1, 1);
        update_side(r.csr(), &theta, &mut x, &opts(0.0, SolverConfig::exact())).unwrap();
        assert_eq!(x.row(0), &[2.0]);
    }

    #[test]
    fn two_by_two_closed_form() {
        let t = [
            RatingTriple::new(0, 0, 1.0),
            RatingTriple::new(0, 1, 2.0),
            RatingTriple::new(1, 1, 1.0),
        ];
        let r = SparseRatings::build(&t, 2, 2).unwrap();
        let theta = FactorMatrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        let mut x = FactorMatrix::zeros(2, 1);
        update_side(r.csr(), &theta, &mut x, &opts(0.05, SolverConfig::exact())).unwrap();
        assert!((x.row(0)[0] - 3.0 / 2.1).abs() < 1e-6);
        assert!((x.row(1)[0] - 1.0 / 1.05).abs() < 1e-6);
    }

    #[test]
    fn empty_rows_keep_their_values_and_fixed_is_untouched() {
        let t = [RatingTriple::new(1, 0, 3.0)];
        let r = SparseRatings::build(&t, 3, 1).unwrap();
        let theta = FactorMatrix::from_vec(1, 2, vec![1.0, 0.5]).unwrap();
        let before_theta = theta.clone();
        let mut x = FactorMatrix::from_vec(3, 2, vec![7.0, 7.0, 0.0, 0.0, 8.0, 8.0]).unwrap();
        let stats = update_side(r.csr(), &theta, &mut x, &opts(0.05, SolverConfig::cg(2))).unwrap();
        assert_eq!(stats.empty, 2);
        assert_eq!(x.row(0), &[7.0, 7.0]);
        assert_eq!(x.row(2), &[8.0, 8.0]);
        assert_ne!(x.row(1), &[0.0, 0.0]);
        assert_eq!(theta, before_theta);
    }

    #[test]
    fn objective_edge_cases() {
        let t = [RatingTriple::new(0, 0, 2.0), RatingTriple::new(1, 1, -3.0)];
        let r = SparseRatings::build(&t, 2, 2).unwrap();
        let zeros = FactorMatrix::zeros(2, 3);
        assert_eq!(objective(&zeros, &zeros, &r, 0.05).unwrap(), 13.0);
        let x = FactorMatrix::from_vec(2, 1, vec![2.0, 3.0]).unwrap();
        let th = FactorMatrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap();
        assert_eq!(objective(&x, &th, &r, 0.0).unwrap(), 0.0);
        assert!(objective(&x, &zeros, &r, 0.0).is_err());
    }

    #[test]
    fn rmse_edge_cases() {
        let x = FactorMatrix::from_vec(1, 1, vec![0.0]).unwrap();
        let th = FactorMatrix::from_vec(2, 1, vec![0.0, 0.0]).unwrap();
        let ones = [RatingTriple::new(0, 0, 1.0), RatingTriple::new(0, 1, 1.0)];
        assert_eq!(rmse(&x, &th, &ones).unwrap(), 1.0);
        assert!(rmse(&x, &th, &[]).is_err());
        assert!(rmse(&x, &th, &[RatingTriple::new(3, 0, 1.0)]).is_err());
        let exact = FactorMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let th1 = FactorMatrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        assert_eq!(rmse(&exact, &th1, &ones).unwrap(), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(AlsConfig::default().validate().is_ok());
        assert!(AlsConfig { f: 0, ..Default::default() }.validate().is_err());
        assert!(AlsConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(AlsConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
    }
}
