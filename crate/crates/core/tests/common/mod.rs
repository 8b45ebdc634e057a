//! Independent reference implementations used by the integration tests.
//! Everything here works in f64 on dense matrices via nalgebra.
#![allow(dead_code)]

use cmf_core::{FactorMatrix, RatingTriple, SparseRatings, SymMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Eigenvalue layouts for random SPD matrices with a fixed condition number.
#[derive(Clone, Copy, Debug)]
pub enum Spectrum {
    /// Uniform on `[1, cond]`.
    Linear,
    /// Uniform in `log10` on `[1, cond]`.
    LogUniform,
}

/// `Q diag(λ) Qᵀ` with Haar-like `Q` and `λ_min = 1`, `λ_max = cond` pinned.
pub fn random_spd(f: usize, cond: f64, spectrum: Spectrum, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(f, f, |_, _| rng.sample(StandardNormal));
    let q = g.qr().q();
    let eig: Vec<f64> = (0..f)
        .map(|i| match i {
            0 => 1.0,
            _ if i == f - 1 => cond,
            _ => match spectrum {
                Spectrum::Linear => 1.0 + (cond - 1.0) * rng.random::<f64>(),
                Spectrum::LogUniform => cond.powf(rng.random::<f64>()),
            },
        })
        .collect();
    let a = &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose();
    (&a + a.transpose()) * 0.5
}

pub fn random_vec(f: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..f).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect()
}

pub fn to_sym(a: &DMatrix<f64>) -> SymMatrix {
    let f = a.nrows();
    let dense: Vec<f32> = (0..f * f).map(|k| a[(k / f, k % f)] as f32).collect();
    SymMatrix::from_dense(f, &dense).unwrap()
}

pub fn sym_to_dense(a: &SymMatrix) -> DMatrix<f64> {
    let f = a.f();
    DMatrix::from_fn(f, f, |i, j| a.get(i, j) as f64)
}

pub fn rel_err(got: &[f32], want: &[f32]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(a, b)| ((*a as f64) - (*b as f64)).powi(2)).sum();
    let den: f64 = want.iter().map(|&b| (b as f64).powi(2)).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

pub fn rel_frobenius(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    let den = want.norm();
    if den == 0.0 {
        got.norm()
    } else {
        (got - want).norm() / den
    }
}

pub fn row_vec(m: &FactorMatrix, i: usize) -> DVector<f64> {
    DVector::from_iterator(m.f(), m.row(i).iter().map(|&v| v as f64))
}

/// `Σ θ_v θ_vᵀ + diag·I` over the given columns.
pub fn dense_gram(idx: &[u32], fixed: &FactorMatrix, diag: f64) -> DMatrix<f64> {
    let f = fixed.f();
    let mut a = DMatrix::<f64>::identity(f, f) * diag;
    for &v in idx {
        let t = row_vec(fixed, v as usize);
        a += &t * t.transpose();
    }
    a
}

/// Explicit ALS normal-equation solve for one row with weighted λ.
pub fn dense_als_row(idx: &[u32], vals: &[f32], fixed: &FactorMatrix, lambda: f64) -> DVector<f64> {
    let f = fixed.f();
    let a = dense_gram(idx, fixed, lambda * idx.len() as f64);
    let mut b = DVector::<f64>::zeros(f);
    for (&v, &r) in idx.iter().zip(vals) {
        b += row_vec(fixed, v as usize) * r as f64;
    }
    a.cholesky().expect("SPD").solve(&b)
}

/// Implicit weighted least squares for one row, built over every column:
/// `c = 1 + α r` on observed cells (1 elsewhere), `p = 1` where `r > 0`.
pub fn dense_implicit_row(
    idx: &[u32],
    vals: &[f32],
    fixed: &FactorMatrix,
    alpha: f64,
    lambda: f64,
) -> DVector<f64> {
    let f = fixed.f();
    let mut c = vec![1.0f64; fixed.rows()];
    let mut p = vec![0.0f64; fixed.rows()];
    for (&v, &r) in idx.iter().zip(vals) {
        c[v as usize] = 1.0 + alpha * r as f64;
        p[v as usize] = if r > 0.0 { 1.0 } else { 0.0 };
    }
    let mut a = DMatrix::<f64>::identity(f, f) * lambda;
    let mut b = DVector::<f64>::zeros(f);
    for v in 0..fixed.rows() {
        let t = row_vec(fixed, v);
        a += &t * t.transpose() * c[v];
        b += &t * (c[v] * p[v]);
    }
    a.cholesky().expect("SPD").solve(&b)
}

/// Implicit objective summed cell by cell.
pub fn dense_implicit_objective(
    x: &FactorMatrix,
    theta: &FactorMatrix,
    ratings: &SparseRatings,
    alpha: f64,
    lambda: f64,
) -> f64 {
    let (m, n) = (x.rows(), theta.rows());
    let mut c = vec![1.0f64; m * n];
    let mut p = vec![0.0f64; m * n];
    for t in ratings.iter_csr() {
        let k = t.user as usize * n + t.item as usize;
        c[k] = 1.0 + alpha * t.rating as f64;
        p[k] = if t.rating > 0.0 { 1.0 } else { 0.0 };
    }
    let mut total = 0.0;
    for u in 0..m {
        let xu = row_vec(x, u);
        for v in 0..n {
            let e = p[u * n + v] - xu.dot(&row_vec(theta, v));
            total += c[u * n + v] * e * e;
        }
    }
    let reg: f64 = x.as_slice().iter().chain(theta.as_slice()).map(|&v| (v as f64).powi(2)).sum();
    total + lambda * reg
}

/// Sparse random ratings with every row and column within bounds.
pub fn random_ratings(m: usize, n: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<RatingTriple> {
    let mut out = Vec::new();
    for u in 0..m {
        for v in 0..n {
            if rng.random::<f64>() < density {
                out.push(RatingTriple::new(u as u32, v as u32, rng.random_range(0.0f32..5.0)));
            }
        }
    }
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
