//! Implicit-feedback ALS.
//!
//! Preferences `p_uv = 1` where `r_uv > 0` and 0 elsewhere, with confidence
//! `c_uv = 1 + α·r_uv`. The loss is dense, but because unobserved cells have
//! confidence 1 each row's system splits into a shared Gram matrix plus a
//! sparse correction:
//!
//! ```text
//! A_u = FᵀF + Σ_{r_uv>0} α·r_uv·θ_vθ_vᵀ + λI
//! b_u = Σ_{r_uv>0} (1 + α·r_uv)·θ_v
//! ```
//!
//! `FᵀF` is computed once per half-update and read by every worker.
//! Regularization here is plain `λ‖x‖²`, not the weighted-λ form used by the
//! explicit engine.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::{check_side, fill_cost, SideStats, TrainOutput, THETA_INIT_STREAM, X_INIT_STREAM};
use crate::data::{CompressedView, RatingTriple, SparseRatings};
use crate::error::{Error, Result};
use crate::factors::{init_factors, FactorMatrix};
use crate::gram::{packed_len, roofline_estimate, GramAssembler, GramSystem, HermitianTimings, SymMatrix, TileConfig};
use crate::linalg::{axpy, derive_seed, dot_f64};
use crate::parallel::{ordered_sum, with_threads};
use crate::report::{secs, EpochRecord, StopReason, TrainReport};
use crate::solvers::{batch_solve_rows, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicitConfig {
    pub f: usize,
    /// Confidence scale α in `c = 1 + α·r`.
    pub alpha: f32,
    pub lambda: f32,
    pub epochs: usize,
    pub solver: SolverConfig,
    pub init_scale: f32,
    pub seed: u64,
    pub tile: TileConfig,
    pub threads: usize,
    pub chunk_rows: usize,
    pub phase_detail: bool,
    pub track_half_objective: bool,
}

impl Default for ImplicitConfig {
    fn default() -> Self {
        ImplicitConfig {
            f: 100,
            alpha: 40.0,
            lambda: 0.05,
            epochs: 10,
            solver: SolverConfig::default(),
            init_scale: 0.1,
            seed: 0,
            tile: TileConfig::default(),
            threads: 0,
            chunk_rows: 1024,
            phase_detail: false,
            track_half_objective: false,
        }
    }
}

impl ImplicitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f == 0 || self.epochs == 0 || self.chunk_rows == 0 {
            return Err(Error::InvalidArgument("f, epochs and chunk_rows must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        TileConfig::new(self.tile.tile, self.tile.batch)?;
        self.solver.validate()
    }

    pub fn side_options(&self) -> ImplicitSideOptions {
        ImplicitSideOptions {
            alpha: self.alpha,
            lambda: self.lambda,
            solver: self.solver,
            tile: self.tile,
            chunk_rows: self.chunk_rows,
            phase_detail: self.phase_detail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImplicitSideOptions {
    pub alpha: f32,
    pub lambda: f32,
    pub solver: SolverConfig,
    pub tile: TileConfig,
    pub chunk_rows: usize,
    pub phase_detail: bool,
}

impl Default for ImplicitSideOptions {
    fn default() -> Self {
        ImplicitConfig::default().side_options()
    }
}

/// Rejects negative observations, which would give confidence below 1.
pub fn check_implicit_ratings(ratings: &SparseRatings) -> Result<()> {
    if let Some(t) = ratings.iter_csr().find(|t| t.rating < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "implicit feedback must be non-negative; ({}, {}) has {}",
            t.user, t.item, t.rating
        )));
    }
    Ok(())
}

const GRAM_CHUNK: usize = 4096;

/// `FᵀF` as a packed lower triangle, accumulated in f32 over fixed row
/// chunks whose partials are added in chunk order.
pub fn precompute_gram(factors: &FactorMatrix, tile: TileConfig) -> SymMatrix {
    let f = factors.f();
    let rows = factors.rows();
    let chunks: Vec<Vec<f32>> = (0..rows.div_ceil(GRAM_CHUNK))
        .into_par_iter()
        .map(|c| {
            let idx: Vec<u32> = (c * GRAM_CHUNK..((c + 1) * GRAM_CHUNK).min(rows)).map(|r| r as u32).collect();
            let mut lower = vec![0.0; packed_len(f)];
            GramAssembler::new(f, tile, false).accumulate(factors, &idx, None, &mut lower);
            lower
        })
        .collect();
    let mut total = vec![0.0; packed_len(f)];
    for part in chunks {
        axpy(1.0, &part, &mut total);
    }
    SymMatrix::from_lower(f, total).expect("packed length matches f")
}

/// One implicit half-update. Rows without observations have `b_u = 0`, so
/// their exact solution is the zero vector and they are set to it directly.
/// Observed zeros carry confidence 1 and preference 0, exactly like
/// unobserved cells.
pub fn implicit_update_side(
    view: CompressedView<'_>,
    fixed: &FactorMatrix,
    gram: &SymMatrix,
    target: &mut FactorMatrix,
    opts: &ImplicitSideOptions,
) -> Result<SideStats> {
    check_side(&view, fixed, target)?;
    opts.solver.validate()?;
    let f = fixed.f();
    if gram.f() != f {
        return Err(Error::DimensionMismatch(format!("Gram matrix has f={}, factors f={f}", gram.f())));
    }
    let base = gram.lower_f32();
    let rows = view.lanes();
    let mut stats = SideStats::default();

    for start in (0..rows).step_by(opts.chunk_rows.max(1)) {
        let end = (start + opts.chunk_rows).min(rows);

        let t = Instant::now();
        let assembled: Vec<(Result<SymMatrix>, HermitianTimings)> = (start..end)
            .into_par_iter()
            .map_init(
                || (GramAssembler::new(f, opts.tile, opts.phase_detail), Vec::new()),
                |(asm, weights), u| {
                    let (idx, vals) = view.lane(u);
                    weights.clear();
                    weights.extend(vals.iter().map(|&r| opts.alpha * r));
                    let mut lower = base.clone();
                    asm.accumulate(fixed, idx, Some(weights), &mut lower);
                    let a = asm.finish(lower, opts.lambda, opts.solver.precision);
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
                for (&v, &r) in idx.iter().zip(vals).filter(|(_, &r)| r > 0.0) {
                    axpy(1.0 + opts.alpha * r, fixed.row(v as usize), &mut b);
                }
                b
            })
            .collect();
        stats.phases.bias += secs(t.elapsed());

        let mut systems = Vec::with_capacity(end - start);
        for ((u, (a, timing)), b) in (start..end).zip(assembled).zip(rhs) {
            stats.phases.add_hermitian_detail(&timing);
            let n_u = view.lane_len(u);
            if n_u == 0 {
                stats.empty += 1;
                target.row_mut(u).fill(0.0);
            }
            systems.push(GramSystem { a: a?, b, n_u });
        }

        let x = &mut target.as_mut_slice()[start * f..end * f];
        let solved = batch_solve_rows(&systems, x, &opts.solver, start)?;
        stats.phases.solve += secs(solved.elapsed);
        stats.solve += solved;
    }
    Ok(stats)
}

/// `Σ_{u,v} c_uv (p_uv − x_uᵀθ_v)² + λ(‖X‖² + ‖Θ‖²)` over all m·n cells,
/// evaluated in `O(N_z f + (m+n) f²)`.
pub fn implicit_objective(
    x: &FactorMatrix,
    theta: &FactorMatrix,
    ratings: &SparseRatings,
    alpha: f32,
    lambda: f32,
) -> Result<f64> {
    if x.rows() != ratings.m() || theta.rows() != ratings.n() || x.f() != theta.f() {
        return Err(Error::DimensionMismatch("factors do not fit the rating matrix".into()));
    }
    let f = x.f();
    // ΘᵀΘ in f64, dense.
    let mut g = vec![0.0f64; f * f];
    for v in 0..theta.rows() {
        let t = theta.row(v);
        for i in 0..f {
            let ti = t[i] as f64;
            for j in 0..f {
                g[i * f + j] += ti * t[j] as f64;
            }
        }
    }
    let csr = ratings.csr();
    let (alpha, lambda) = (alpha as f64, lambda as f64);
    let parts: Vec<f64> = (0..x.rows())
        .into_par_iter()
        .map(|u| {
            let xu = x.row(u);
            // Every cell as if unobserved: xᵀ(ΘᵀΘ)x.
            let mut s = 0.0;
            for i in 0..f {
                let gi = &g[i * f..(i + 1) * f];
                let row: f64 = gi.iter().zip(xu).map(|(a, &b)| a * b as f64).sum();
                s += xu[i] as f64 * row;
            }
            let (idx, vals) = csr.lane(u);
            for (&v, &r) in idx.iter().zip(vals) {
                let pred = dot_f64(xu, theta.row(v as usize));
                let c = 1.0 + alpha * r as f64;
                let p = if r > 0.0 { 1.0 } else { 0.0 };
                s += c * (p - pred).powi(2) - pred * pred;
            }
            s + lambda * dot_f64(xu, xu)
        })
        .collect();
    let reg_theta = lambda * theta.as_slice().iter().map(|&v| v as f64 * v as f64).sum::<f64>();
    Ok(ordered_sum(parts) + reg_theta)
}

/// Confidence-weighted mean percentile rank of held-out positives: 0 means
/// every held-out item ranked first for its user, 0.5 is random.
pub fn mean_percentile_rank(x: &FactorMatrix, theta: &FactorMatrix, test: &[RatingTriple]) -> Result<f64> {
    let n = theta.rows();
    if n < 2 {
        return Err(Error::InvalidArgument("percentile rank needs at least two items".into()));
    }
    if let Some(t) = test.iter().find(|t| t.user as usize >= x.rows() || t.item as usize >= n) {
        return Err(Error::DimensionMismatch(format!("test entry ({}, {}) outside the model", t.user, t.item)));
    }
    let mut by_user: Vec<&RatingTriple> = test.iter().filter(|t| t.rating > 0.0).collect();
    if by_user.is_empty() {
        return Err(Error::InvalidArgument("no positive test entries".into()));
    }
    by_user.sort_by_key(|t| (t.user, t.item));
    let groups: Vec<&[&RatingTriple]> = by_user.chunk_by(|a, b| a.user == b.user).collect();
    let parts: Vec<(f64, f64)> = groups
        .par_iter()
        .map(|group| {
            let xu = x.row(group[0].user as usize);
            let scores: Vec<f64> = (0..n).map(|v| dot_f64(xu, theta.row(v))).collect();
            let mut num = 0.0;
            let mut den = 0.0;
            for t in group.iter() {
                let s = scores[t.item as usize];
                let above = scores.iter().filter(|&&o| o > s).count();
                num += t.rating as f64 * above as f64 / (n - 1) as f64;
                den += t.rating as f64;
            }
            (num, den)
        })
        .collect();
    let (num, den) = parts.iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    Ok(num / den)
}

/// Alternating implicit ALS. With a non-empty `test`, records the mean
/// percentile rank of its positives each epoch.
pub fn implicit_train(train: &SparseRatings, test: &[RatingTriple], cfg: &ImplicitConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    check_implicit_ratings(train)?;
    let mut x = init_factors(train.m(), cfg.f, cfg.init_scale, derive_seed(cfg.seed, X_INIT_STREAM))?;
    let mut theta = init_factors(train.n(), cfg.f, cfg.init_scale, derive_seed(cfg.seed, THETA_INIT_STREAM))?;
    let opts = cfg.side_options();
    let roofline = roofline_estimate(train.m(), train.n(), train.nnz(), cfg.f, cfg.solver.cg_iters);
    let gram_flops = (train.m() + train.n()) as f64 * (cfg.f * (cfg.f + 1)) as f64;

    with_threads(cfg.threads, || {
        let mut report = TrainReport::new();
        let initial_objective = if cfg.track_half_objective {
            Some(implicit_objective(&x, &theta, train, cfg.alpha, cfg.lambda)?)
        } else {
            None
        };
        for epoch in 1..=cfg.epochs {
            let mut rec = EpochRecord::new(epoch, "implicit", cfg.solver.label());

            let t = Instant::now();
            let gram_theta = precompute_gram(&theta, cfg.tile);
            let gram_time = secs(t.elapsed());
            let mut side = implicit_update_side(train.csr(), &theta, &gram_theta, &mut x, &opts)?;
            side.phases.hermitian += gram_time;
            report.empty_rows = side.empty;

            if cfg.track_half_objective {
                let t = Instant::now();
                rec.objective_after_x = Some(implicit_objective(&x, &theta, train, cfg.alpha, cfg.lambda)?);
                rec.phases.eval += secs(t.elapsed());
            }

            let t = Instant::now();
            let gram_x = precompute_gram(&x, cfg.tile);
            let gram_time = secs(t.elapsed());
            let mut side_theta = implicit_update_side(train.csc(), &x, &gram_x, &mut theta, &opts)?;
            side_theta.phases.hermitian += gram_time;
            report.empty_cols = side_theta.empty;
            side += side_theta;

            let t = Instant::now();
            rec.train_objective = implicit_objective(&x, &theta, train, cfg.alpha, cfg.lambda)?;
            if !test.is_empty() {
                rec.test_mpr = Some(mean_percentile_rank(&x, &theta, test)?);
            }
            side.phases.eval = secs(t.elapsed());
            rec.phases += side.phases;
            rec.cg_iterations = side.solve.cg_iterations;
            rec.cg_breakdowns = side.solve.breakdowns;
            fill_cost(&mut rec, &roofline, &cfg.solver);
            rec.hermitian_flops += gram_flops;
            report.epochs.push(rec);
        }
        report.stop_reason = StopReason::MaxEpochs;
        Ok(TrainOutput {
            x,
            theta,
            report,
            roofline,
            initial_objective,
        })
    })?
}
