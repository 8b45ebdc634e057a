//! Per-row normal equations `A_u x_u = b_u`.
//!
//! `A_u` is accumulated tile by tile over its lower triangle only: a batch of
//! feature vectors is staged into a contiguous buffer, then every lower tile
//! pair `(I, J)`, `J <= I`, is loaded into a small accumulator, receives the
//! outer products of the whole batch, and is written back. Each entry sees its
//! contributions in CSR order, so the result is bitwise independent of both
//! the tile edge and the batch size.

use std::time::{Duration, Instant};

use half::f16;
use half::slice::HalfFloatSliceExt;
use serde::{Deserialize, Serialize};

use crate::data::CompressedView;
use crate::error::{Error, Result};
use crate::factors::FactorMatrix;
use crate::linalg::{axpy, dot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Fp32,
    Fp16,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::Fp32 => 4,
            Precision::Fp16 => 2,
        }
    }
}

/// How λ enters the diagonal of `A_u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularization {
    /// `λ·n_u·I`, the weighted-λ form.
    #[default]
    Weighted,
    /// `λ·I`.
    Plain,
}

impl Regularization {
    #[inline]
    pub fn diagonal(self, lambda: f32, n_u: usize) -> f32 {
        match self {
            Regularization::Weighted => lambda * n_u as f32,
            Regularization::Plain => lambda,
        }
    }
}

#[inline]
pub fn packed_len(f: usize) -> usize {
    f * (f + 1) / 2
}

/// Offset of `(i, j)`, `j <= i`, in row-major packed lower storage.
#[inline]
pub fn packed_index(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

#[derive(Debug, Clone, PartialEq)]
pub enum SymStorage {
    Single(Vec<f32>),
    Half(Vec<f16>),
}

/// Symmetric `f x f` matrix stored as its packed lower triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    f: usize,
    storage: SymStorage,
}

impl SymMatrix {
    pub fn from_lower(f: usize, lower: Vec<f32>) -> Result<Self> {
        if lower.len() != packed_len(f) {
            return Err(Error::DimensionMismatch(format!(
                "packed lower triangle of f={f} needs {} entries, got {}",
                packed_len(f),
                lower.len()
            )));
        }
        Ok(SymMatrix {
            f,
            storage: SymStorage::Single(lower),
        })
    }

    pub fn from_lower_half(f: usize, lower: Vec<f16>) -> Result<Self> {
        if lower.len() != packed_len(f) {
            return Err(Error::DimensionMismatch(format!(
                "packed lower triangle of f={f} needs {} entries, got {}",
                packed_len(f),
                lower.len()
            )));
        }
        Ok(SymMatrix {
            f,
            storage: SymStorage::Half(lower),
        })
    }

    /// Takes the lower triangle of a dense row-major matrix.
    pub fn from_dense(f: usize, dense: &[f32]) -> Result<Self> {
        if dense.len() != f * f {
            return Err(Error::DimensionMismatch(format!(
                "dense matrix of f={f} needs {} entries, got {}",
                f * f,
                dense.len()
            )));
        }
        let mut lower = Vec::with_capacity(packed_len(f));
        for i in 0..f {
            lower.extend_from_slice(&dense[i * f..i * f + i + 1]);
        }
        Self::from_lower(f, lower)
    }

    pub fn identity(f: usize) -> Self {
        let mut lower = vec![0.0; packed_len(f)];
        for i in 0..f {
            lower[packed_index(i, i)] = 1.0;
        }
        SymMatrix {
            f,
            storage: SymStorage::Single(lower),
        }
    }

    #[inline]
    pub fn f(&self) -> usize {
        self.f
    }

    pub fn storage(&self) -> &SymStorage {
        &self.storage
    }

    pub fn precision(&self) -> Precision {
        match self.storage {
            SymStorage::Single(_) => Precision::Fp32,
            SymStorage::Half(_) => Precision::Fp16,
        }
    }

    /// Bytes occupied by the stored triangle.
    pub fn storage_bytes(&self) -> usize {
        packed_len(self.f) * self.precision().bytes()
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        let k = if j <= i { packed_index(i, j) } else { packed_index(j, i) };
        match &self.storage {
            SymStorage::Single(v) => v[k],
            SymStorage::Half(v) => v[k].to_f32(),
        }
    }

    /// The packed lower triangle promoted to f32.
    pub fn lower_f32(&self) -> Vec<f32> {
        match &self.storage {
            SymStorage::Single(v) => v.clone(),
            SymStorage::Half(v) => v.iter().map(|h| h.to_f32()).collect(),
        }
    }

    /// Full row-major matrix, mirrored from the lower triangle.
    pub fn to_dense(&self) -> Vec<f32> {
        let f = self.f;
        let mut out = vec![0.0; f * f];
        for i in 0..f {
            for j in 0..=i {
                let v = self.get(i, j);
                out[i * f + j] = v;
                out[j * f + i] = v;
            }
        }
        out
    }

    pub fn to_half(&self) -> Result<SymMatrix> {
        match &self.storage {
            SymStorage::Single(v) => Ok(SymMatrix {
                f: self.f,
                storage: SymStorage::Half(pack_half(v)?),
            }),
            SymStorage::Half(_) => Ok(self.clone()),
        }
    }

    /// `y = A x`. Half storage is promoted to f32 one packed row at a time
    /// through `scratch`; all arithmetic is f32.
    pub fn matvec(&self, x: &[f32], y: &mut [f32], scratch: &mut Vec<f32>) {
        let f = self.f;
        debug_assert_eq!(x.len(), f);
        debug_assert_eq!(y.len(), f);
        y.fill(0.0);
        match &self.storage {
            SymStorage::Single(lower) => {
                for i in 0..f {
                    let start = packed_index(i, 0);
                    sym_row_update(&lower[start..start + i + 1], i, x, y);
                }
            }
            SymStorage::Half(lower) => {
                scratch.resize(f, 0.0);
                for i in 0..f {
                    let start = packed_index(i, 0);
                    let row = &mut scratch[..i + 1];
                    lower[start..start + i + 1].convert_to_f32_slice(row);
                    sym_row_update(row, i, x, y);
                }
            }
        }
    }
}

/// Applies packed row `i` (entries `(i, 0..=i)`) to `y = A x`, using symmetry
/// for the mirrored upper part.
#[inline]
fn sym_row_update(row: &[f32], i: usize, x: &[f32], y: &mut [f32]) {
    let (off, diag) = row.split_at(i);
    y[i] += dot(off, &x[..i]) + diag[0] * x[i];
    axpy(x[i], off, &mut y[..i]);
}

/// Rounds each entry to the nearest binary16 (ties to even).
pub fn pack_half(lower: &[f32]) -> Result<Vec<f16>> {
    let mut out = vec![f16::ZERO; lower.len()];
    out.convert_from_f32_slice(lower);
    if let Some(index) = out.iter().position(|h| !h.is_finite()) {
        return Err(Error::HalfOverflow {
            index,
            value: lower[index],
        });
    }
    Ok(out)
}

/// One normal-equation system. `n_u == 0` marks a row with no observations;
/// such systems are skipped by the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSystem {
    pub a: SymMatrix,
    pub b: Vec<f32>,
    pub n_u: usize,
}

impl GramSystem {
    pub fn new(a: SymMatrix, b: Vec<f32>, n_u: usize) -> Result<Self> {
        if b.len() != a.f() {
            return Err(Error::DimensionMismatch(format!(
                "rhs has {} entries for f={}",
                b.len(),
                a.f()
            )));
        }
        Ok(GramSystem { a, b, n_u })
    }

    pub fn f(&self) -> usize {
        self.a.f()
    }

    pub fn is_empty(&self) -> bool {
        self.n_u == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileConfig {
    /// Edge length of the square sub-blocks of `A_u`.
    pub tile: usize,
    /// Feature vectors staged per pass.
    pub batch: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig { tile: 8, batch: 32 }
    }
}

impl TileConfig {
    pub fn new(tile: usize, batch: usize) -> Result<Self> {
        if tile == 0 || batch == 0 {
            return Err(Error::InvalidArgument(format!(
                "tile ({tile}) and batch ({batch}) must be at least 1"
            )));
        }
        Ok(TileConfig { tile, batch })
    }

    /// Clamps the tile edge to `f`.
    pub fn for_dim(self, f: usize) -> Self {
        TileConfig {
            tile: self.tile.clamp(1, f.max(1)),
            batch: self.batch.max(1),
        }
    }
}

/// Summed worker time spent in each assembly sub-phase.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HermitianTimings {
    pub stage: Duration,
    pub accumulate: Duration,
    pub store: Duration,
}

impl std::ops::AddAssign for HermitianTimings {
    fn add_assign(&mut self, o: Self) {
        self.stage += o.stage;
        self.accumulate += o.accumulate;
        self.store += o.store;
    }
}

/// Reusable per-worker scratch for tiled Gram accumulation.
#[derive(Debug, Clone)]
pub struct GramAssembler {
    f: usize,
    cfg: TileConfig,
    stage: Vec<f32>,
    weights: Vec<f32>,
    acc: Vec<f32>,
    instrument: bool,
    pub timings: HermitianTimings,
}

impl GramAssembler {
    pub fn new(f: usize, cfg: TileConfig, instrument: bool) -> Self {
        let cfg = cfg.for_dim(f);
        GramAssembler {
            f,
            cfg,
            stage: vec![0.0; cfg.batch * f],
            weights: vec![1.0; cfg.batch],
            acc: vec![0.0; cfg.tile * cfg.tile],
            instrument,
            timings: HermitianTimings::default(),
        }
    }

    pub fn f(&self) -> usize {
        self.f
    }

    #[inline]
    fn now(&self) -> Option<Instant> {
        self.instrument.then(Instant::now)
    }

    /// Adds `Σ_k w_k · θ_{idx_k} θ_{idx_k}ᵀ` into the packed lower triangle
    /// `lower`, which holds the starting value (zeros or a base matrix).
    /// Weights default to 1.
    pub fn accumulate(
        &mut self,
        fixed: &FactorMatrix,
        idx: &[u32],
        weights: Option<&[f32]>,
        lower: &mut [f32],
    ) {
        let f = self.f;
        let TileConfig { tile, batch } = self.cfg;
        debug_assert_eq!(fixed.f(), f);
        debug_assert_eq!(lower.len(), packed_len(f));
        let ntiles = f.div_ceil(tile);

        for start in (0..idx.len()).step_by(batch) {
            let count = batch.min(idx.len() - start);

            let t0 = self.now();
            for s in 0..count {
                self.stage[s * f..(s + 1) * f].copy_from_slice(fixed.row(idx[start + s] as usize));
                self.weights[s] = weights.map_or(1.0, |w| w[start + s]);
            }
            let t1 = self.now();

            for ti in 0..ntiles {
                let (i0, i1) = (ti * tile, ((ti + 1) * tile).min(f));
                for tj in 0..=ti {
                    let (j0, j1) = (tj * tile, ((tj + 1) * tile).min(f));
                    let diagonal_block = ti == tj;

                    for i in i0..i1 {
                        let jmax = if diagonal_block { i + 1 } else { j1 };
                        let src = packed_index(i, j0);
                        self.acc[(i - i0) * tile..(i - i0) * tile + (jmax - j0)]
                            .copy_from_slice(&lower[src..src + (jmax - j0)]);
                    }

                    for s in 0..count {
                        let v = &self.stage[s * f..(s + 1) * f];
                        let w = self.weights[s];
                        for i in i0..i1 {
                            let jmax = if diagonal_block { i + 1 } else { j1 };
                            let wi = w * v[i];
                            let acc_row = &mut self.acc[(i - i0) * tile..(i - i0) * tile + (jmax - j0)];
                            for (a, &vj) in acc_row.iter_mut().zip(&v[j0..jmax]) {
                                *a += wi * vj;
                            }
                        }
                    }

                    for i in i0..i1 {
                        let jmax = if diagonal_block { i + 1 } else { j1 };
                        let dst = packed_index(i, j0);
                        lower[dst..dst + (jmax - j0)]
                            .copy_from_slice(&self.acc[(i - i0) * tile..(i - i0) * tile + (jmax - j0)]);
                    }
                }
            }

            if let (Some(t0), Some(t1)) = (t0, t1) {
                self.timings.stage += t1 - t0;
                self.timings.accumulate += t1.elapsed();
            }
        }
    }

    /// Adds `diag` to the diagonal and converts to the requested storage.
    pub fn finish(&mut self, mut lower: Vec<f32>, diag: f32, precision: Precision) -> Result<SymMatrix> {
        let t0 = self.now();
        if diag != 0.0 {
            for i in 0..self.f {
                lower[packed_index(i, i)] += diag;
            }
        }
        let out = match precision {
            Precision::Fp32 => SymMatrix::from_lower(self.f, lower),
            Precision::Fp16 => SymMatrix::from_lower_half(self.f, pack_half(&lower)?),
        };
        if let Some(t0) = t0 {
            self.timings.store += t0.elapsed();
        }
        out
    }

    /// Explicit-feedback `A_u = Σ θ_v θ_vᵀ + reg(λ, n_u)·I` for one lane.
    pub fn hermitian(
        &mut self,
        lane_idx: &[u32],
        fixed: &FactorMatrix,
        lambda: f32,
        reg: Regularization,
        precision: Precision,
    ) -> Result<SymMatrix> {
        let mut lower = vec![0.0; packed_len(self.f)];
        self.accumulate(fixed, lane_idx, None, &mut lower);
        self.finish(lower, reg.diagonal(lambda, lane_idx.len()), precision)
    }
}

/// `A_u` for lane `u` of `view` against the fixed factors.
pub fn get_hermitian(
    view: &CompressedView<'_>,
    u: usize,
    fixed: &FactorMatrix,
    lambda: f32,
    reg: Regularization,
    cfg: TileConfig,
    precision: Precision,
) -> Result<SymMatrix> {
    let (idx, _) = view.lane(u);
    GramAssembler::new(fixed.f(), cfg, false).hermitian(idx, fixed, lambda, reg, precision)
}

/// `b_u = Σ r_uv θ_v`, accumulated in lane order.
pub fn get_bias(idx: &[u32], vals: &[f32], fixed: &FactorMatrix) -> Vec<f32> {
    let mut b = vec![0.0; fixed.f()];
    bias_into(idx, vals, fixed, &mut b);
    b
}

pub(crate) fn bias_into(idx: &[u32], vals: &[f32], fixed: &FactorMatrix, b: &mut [f32]) {
    b.fill(0.0);
    for (&v, &r) in idx.iter().zip(vals) {
        axpy(r, fixed.row(v as usize), b);
    }
}

/// Leading-order cost of one half-update (`rows` systems sharing `nnz` ratings).
///
/// Constants: an FMA counts as 2 flops; assembly touches only the lower
/// triangle (`nnz·f(f+1)` flops); a Cholesky solve costs `f³/3`; one truncated
/// CG iteration costs `2f² + 10f` (one symmetric matvec, two dot products,
/// three vector updates). Bytes assume 4-byte floats; CG re-reads the packed
/// triangle once per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfUpdateCost {
    pub rows: usize,
    pub hermitian_flops: f64,
    pub hermitian_bytes: f64,
    pub bias_flops: f64,
    pub solve_flops_exact: f64,
    pub solve_flops_cg: f64,
    pub solve_bytes_exact: f64,
    pub solve_bytes_cg_fp32: f64,
    pub solve_bytes_cg_fp16: f64,
}

impl HalfUpdateCost {
    fn new(rows: usize, nnz: usize, f: usize, cg_iters: usize) -> Self {
        let (rows_f, nnz_f, ff) = (rows as f64, nnz as f64, f as f64);
        let tri = packed_len(f) as f64;
        HalfUpdateCost {
            rows,
            hermitian_flops: nnz_f * ff * (ff + 1.0),
            hermitian_bytes: 4.0 * (nnz_f * ff + rows_f * tri),
            bias_flops: 2.0 * nnz_f * ff,
            solve_flops_exact: rows_f * ff.powi(3) / 3.0,
            solve_flops_cg: rows_f * cg_iters as f64 * (2.0 * ff * ff + 10.0 * ff),
            solve_bytes_exact: rows_f * tri * 4.0,
            solve_bytes_cg_fp32: rows_f * cg_iters as f64 * tri * 4.0,
            solve_bytes_cg_fp16: rows_f * cg_iters as f64 * tri * 2.0,
        }
    }

    /// Flops per 4-byte word moved during assembly.
    pub fn hermitian_intensity(&self) -> f64 {
        self.hermitian_flops / (self.hermitian_bytes / 4.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RooflineEstimate {
    pub f: usize,
    pub cg_iters: usize,
    pub update_x: HalfUpdateCost,
    pub update_theta: HalfUpdateCost,
    /// One SGD epoch: `12f` flops and four f-vectors moved per sample.
    pub sgd_flops: f64,
    pub sgd_bytes: f64,
}

impl RooflineEstimate {
    pub fn als_hermitian_flops(&self) -> f64 {
        self.update_x.hermitian_flops + self.update_theta.hermitian_flops
    }

    pub fn als_solve_flops_exact(&self) -> f64 {
        self.update_x.solve_flops_exact + self.update_theta.solve_flops_exact
    }

    pub fn als_solve_flops_cg(&self) -> f64 {
        self.update_x.solve_flops_cg + self.update_theta.solve_flops_cg
    }

    /// CG-to-exact solve flop ratio.
    pub fn cg_flop_ratio(&self) -> f64 {
        self.als_solve_flops_cg() / self.als_solve_flops_exact()
    }

    /// Flops per 4-byte word for SGD.
    pub fn sgd_intensity(&self) -> f64 {
        self.sgd_flops / (self.sgd_bytes / 4.0)
    }
}

pub fn roofline_estimate(m: usize, n: usize, nnz: usize, f: usize, cg_iters: usize) -> RooflineEstimate {
    let ff = f as f64;
    RooflineEstimate {
        f,
        cg_iters,
        update_x: HalfUpdateCost::new(m, nnz, f, cg_iters),
        update_theta: HalfUpdateCost::new(n, nnz, f, cg_iters),
        sgd_flops: nnz as f64 * 12.0 * ff,
        sgd_bytes: nnz as f64 * 16.0 * ff,
    }
}
