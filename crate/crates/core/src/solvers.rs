//! Batched SPD solves: exact (Cholesky on the packed triangle) or truncated
//! conjugate gradient, optionally reading a binary16 `A`.
//!
//! The CG recurrence is the textbook one: the residual is updated with
//! `α·A·p`, not `α·p`.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::{packed_index, GramSystem, Precision, SymMatrix, SymStorage};
use crate::linalg::{axpy, dot, norm2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Exact,
    #[default]
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Maximum CG iterations per system (`f_s`).
    pub cg_iters: usize,
    /// Relative CG tolerance; a system stops once `‖r‖ < cg_tol·‖b‖`.
    pub cg_tol: f32,
    /// Storage precision of the assembled `A`.
    pub precision: Precision,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: SolverMethod::Cg,
            cg_iters: 6,
            cg_tol: 1e-4,
            precision: Precision::Fp32,
        }
    }
}

impl SolverConfig {
    pub fn exact() -> Self {
        SolverConfig {
            method: SolverMethod::Exact,
            ..Default::default()
        }
    }

    pub fn cg(cg_iters: usize) -> Self {
        SolverConfig {
            cg_iters,
            ..Default::default()
        }
    }

    pub fn cg_half(cg_iters: usize) -> Self {
        SolverConfig {
            cg_iters,
            precision: Precision::Fp16,
            ..Default::default()
        }
    }

    pub fn with_tol(mut self, cg_tol: f32) -> Self {
        self.cg_tol = cg_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cg_tol >= 0.0 && self.cg_tol.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "CG tolerance must be finite and non-negative, got {}",
                self.cg_tol
            )));
        }
        match self.method {
            SolverMethod::Cg if self.cg_iters == 0 => Err(Error::InvalidArgument(
                "CG needs at least one iteration".into(),
            )),
            SolverMethod::Exact if self.precision == Precision::Fp16 => Err(Error::InvalidArgument(
                "half-precision storage is only read by the CG solver; use --solver cg with --half".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Short label such as `exact-fp32` or `cg-fp16`.
    pub fn label(&self) -> &'static str {
        match (self.method, self.precision) {
            (SolverMethod::Exact, Precision::Fp32) => "exact-fp32",
            (SolverMethod::Exact, Precision::Fp16) => "exact-fp16",
            (SolverMethod::Cg, Precision::Fp32) => "cg-fp32",
            (SolverMethod::Cg, Precision::Fp16) => "cg-fp16",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CgOutcome {
    /// Iterations that updated `x`.
    pub iterations: usize,
    /// `pᵀAp <= 0` was hit; `x` holds the last good iterate.
    pub breakdown: bool,
    pub residual_norm: f32,
}

/// Scratch buffers for one worker; reused across systems.
#[derive(Debug, Default, Clone)]
pub struct SolverWorkspace {
    chol: Vec<f32>,
    r: Vec<f32>,
    p: Vec<f32>,
    ap: Vec<f32>,
    row: Vec<f32>,
}

impl SolverWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn resize(&mut self, f: usize) {
        self.r.resize(f, 0.0);
        self.p.resize(f, 0.0);
        self.ap.resize(f, 0.0);
    }

    /// Cholesky factor-and-solve. On failure returns the failing pivot and
    /// leaves `x` untouched.
    pub fn exact(&mut self, a: &SymMatrix, b: &[f32], x: &mut [f32]) -> std::result::Result<(), (usize, f32)> {
        let f = a.f();
        match a.storage() {
            SymStorage::Single(v) => {
                self.chol.clear();
                self.chol.extend_from_slice(v);
            }
            SymStorage::Half(_) => self.chol = a.lower_f32(),
        }
        cholesky_in_place(&mut self.chol, f)?;
        let l = &self.chol;

        // L y = b
        let y = &mut self.r;
        y.resize(f, 0.0);
        for i in 0..f {
            let ri = packed_index(i, 0);
            y[i] = (b[i] - dot(&l[ri..ri + i], &y[..i])) / l[ri + i];
        }
        // Lᵀ x = y, column sweep over the packed rows.
        for i in (0..f).rev() {
            let ri = packed_index(i, 0);
            let xi = y[i] / l[ri + i];
            y[i] = xi;
            axpy(-xi, &l[ri..ri + i], &mut y[..i]);
        }
        x.copy_from_slice(&y[..f]);
        Ok(())
    }

    /// Truncated CG from the warm start in `x`, at most `max_iters` updates,
    /// stopping once `‖r‖ < eps`. Optionally records `‖r‖` before the loop
    /// and after every update.
    pub fn cg(
        &mut self,
        a: &SymMatrix,
        x: &mut [f32],
        b: &[f32],
        max_iters: usize,
        eps: f32,
        mut trace: Option<&mut Vec<f32>>,
    ) -> CgOutcome {
        let f = a.f();
        self.resize(f);
        let SolverWorkspace { r, p, ap, row, .. } = self;

        if x.iter().all(|&v| v == 0.0) {
            r.copy_from_slice(b);
        } else {
            a.matvec(x, ap, row);
            for ((ri, &bi), &ai) in r.iter_mut().zip(b).zip(ap.iter()) {
                *ri = bi - ai;
            }
        }
        p.copy_from_slice(r);
        let mut rs_old = dot(r, r);
        if let Some(t) = trace.as_deref_mut() {
            t.push(rs_old.sqrt());
        }
        let mut out = CgOutcome {
            residual_norm: rs_old.sqrt(),
            ..Default::default()
        };
        if rs_old == 0.0 {
            return out;
        }

        for j in 1..=max_iters {
            a.matvec(p, ap, row);
            let pap = dot(p, ap);
            if !(pap > 0.0) || !pap.is_finite() {
                out.breakdown = true;
                break;
            }
            let alpha = rs_old / pap;
            axpy(alpha, p, x);
            axpy(-alpha, ap, r);
            let rs_new = dot(r, r);
            out.iterations = j;
            out.residual_norm = rs_new.sqrt();
            if let Some(t) = trace.as_deref_mut() {
                t.push(out.residual_norm);
            }
            if out.residual_norm < eps || rs_new == 0.0 {
                break;
            }
            let beta = rs_new / rs_old;
            for (pi, &ri) in p.iter_mut().zip(r.iter()) {
                *pi = ri + beta * *pi;
            }
            rs_old = rs_new;
        }
        out
    }
}

fn cholesky_in_place(l: &mut [f32], f: usize) -> std::result::Result<(), (usize, f32)> {
    for i in 0..f {
        let ri = packed_index(i, 0);
        for j in 0..=i {
            let rj = packed_index(j, 0);
            let s = l[ri + j] - dot(&l[ri..ri + j], &l[rj..rj + j]);
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err((i, s));
                }
                l[ri + i] = s.sqrt();
            } else {
                l[ri + j] = s / l[rj + j];
            }
        }
    }
    Ok(())
}

/// Exact solve of `A x = b` for SPD `A`.
pub fn exact_solve(a: &SymMatrix, b: &[f32]) -> Result<Vec<f32>> {
    check_dims(a, b.len())?;
    let mut x = vec![0.0; a.f()];
    SolverWorkspace::new()
        .exact(a, b, &mut x)
        .map_err(|(pivot, value)| Error::NotPositiveDefinite {
            row: None,
            pivot,
            value,
        })?;
    Ok(x)
}

/// Truncated CG on `x` (warm start in, solution out) with absolute tolerance `eps`.
pub fn cg_solve(a: &SymMatrix, x: &mut [f32], b: &[f32], max_iters: usize, eps: f32) -> Result<CgOutcome> {
    check_dims(a, b.len())?;
    check_dims(a, x.len())?;
    Ok(SolverWorkspace::new().cg(a, x, b, max_iters, eps, None))
}

/// [`cg_solve`] for a binary16-stored `A`; every entry is promoted to f32 as it
/// is read and all vectors stay f32.
pub fn cg_solve_half(a: &SymMatrix, x: &mut [f32], b: &[f32], max_iters: usize, eps: f32) -> Result<CgOutcome> {
    if a.precision() != Precision::Fp16 {
        return Err(Error::InvalidArgument(
            "cg_solve_half expects binary16 storage".into(),
        ));
    }
    cg_solve(a, x, b, max_iters, eps)
}

/// [`cg_solve`] that also returns `‖r‖` at the start and after every update.
pub fn cg_solve_traced(
    a: &SymMatrix,
    x: &mut [f32],
    b: &[f32],
    max_iters: usize,
    eps: f32,
) -> Result<(CgOutcome, Vec<f32>)> {
    check_dims(a, b.len())?;
    check_dims(a, x.len())?;
    let mut trace = Vec::with_capacity(max_iters + 1);
    let out = SolverWorkspace::new().cg(a, x, b, max_iters, eps, Some(&mut trace));
    Ok((out, trace))
}

fn check_dims(a: &SymMatrix, len: usize) -> Result<()> {
    if len != a.f() {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {len} for an f={} system",
            a.f()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchStats {
    pub elapsed: Duration,
    pub solved: usize,
    pub skipped_empty: usize,
    pub cg_iterations: usize,
    pub breakdowns: usize,
}

impl std::ops::AddAssign for BatchStats {
    fn add_assign(&mut self, o: Self) {
        self.elapsed += o.elapsed;
        self.solved += o.solved;
        self.skipped_empty += o.skipped_empty;
        self.cg_iterations += o.cg_iterations;
        self.breakdowns += o.breakdowns;
    }
}

enum RowResult {
    Skipped,
    Exact,
    Cg(CgOutcome),
}

/// Solves every system, using `x` (`systems.len() x f`, row-major) as warm
/// starts and overwriting it with the solutions. Empty systems keep their
/// row of `x`. Runs on the current rayon pool; the result does not depend on
/// the number of workers.
pub fn batch_solve(systems: &[GramSystem], x: &mut [f32], cfg: &SolverConfig) -> Result<BatchStats> {
    batch_solve_rows(systems, x, cfg, 0)
}

/// [`batch_solve`] where system `k` belongs to row `first_row + k`, which is
/// used to name failing rows.
pub fn batch_solve_rows(
    systems: &[GramSystem],
    x: &mut [f32],
    cfg: &SolverConfig,
    first_row: usize,
) -> Result<BatchStats> {
    cfg.validate()?;
    let Some(f) = systems.first().map(GramSystem::f) else {
        return Ok(BatchStats::default());
    };
    if systems.iter().any(|s| s.f() != f) {
        return Err(Error::DimensionMismatch("systems in a batch must share f".into()));
    }
    if x.len() != systems.len() * f {
        return Err(Error::DimensionMismatch(format!(
            "{} warm-start values for {} systems of f={f}",
            x.len(),
            systems.len()
        )));
    }

    let start = Instant::now();
    let results: Vec<std::result::Result<RowResult, Error>> = x
        .par_chunks_mut(f)
        .zip(systems.par_iter())
        .enumerate()
        .map_init(SolverWorkspace::new, |ws, (k, (xk, sys))| {
            if sys.is_empty() {
                return Ok(RowResult::Skipped);
            }
            match cfg.method {
                SolverMethod::Exact => ws
                    .exact(&sys.a, &sys.b, xk)
                    .map(|_| RowResult::Exact)
                    .map_err(|(pivot, value)| Error::NotPositiveDefinite {
                        row: Some(first_row + k),
                        pivot,
                        value,
                    }),
                SolverMethod::Cg => {
                    let eps = cfg.cg_tol * norm2(&sys.b);
                    Ok(RowResult::Cg(ws.cg(&sys.a, xk, &sys.b, cfg.cg_iters, eps, None)))
                }
            }
        })
        .collect();

    let mut stats = BatchStats {
        elapsed: start.elapsed(),
        ..Default::default()
    };
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(RowResult::Skipped) => stats.skipped_empty += 1,
            Ok(RowResult::Exact) => stats.solved += 1,
            Ok(RowResult::Cg(o)) => {
                stats.solved += 1;
                stats.cg_iterations += o.iterations;
                stats.breakdowns += o.breakdown as usize;
            }
            Err(e) => failures.push(e),
        }
    }
    if failures.is_empty() {
        Ok(stats)
    } else {
        Err(Error::SolveFailures(failures))
    }
}
