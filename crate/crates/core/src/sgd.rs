//! Stochastic gradient descent baseline.
//!
//! One epoch is a full pass over the training ratings in a seeded random
//! order. In hogwild mode the shuffled sequence is cut into contiguous
//! blocks, one per worker, and workers read and write factor rows without
//! locks. Shared entries are relaxed atomics, so concurrent updates may be
//! lost or interleaved but never tear a single float. With one worker
//! hogwild visits samples in the serial order and produces identical bits.

use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::als::{objective, rmse, TrainOutput, THETA_INIT_STREAM, X_INIT_STREAM};
use crate::data::{RatingTriple, SparseRatings};
use crate::error::{Error, Result};
use crate::factors::{init_factors, FactorMatrix};
use crate::gram::roofline_estimate;
use crate::linalg::{derive_seed, dot};
use crate::report::{secs, EpochRecord, StopReason, TrainReport};

const SHUFFLE_STREAM: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SgdMode {
    #[default]
    Serial,
    Hogwild,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub f: usize,
    pub lambda: f32,
    pub epochs: usize,
    /// Initial learning rate α⁰.
    pub lr: f32,
    /// Epoch `k` (0-based) uses `α⁰ / (1 + decay·k)`.
    pub decay: f32,
    pub mode: SgdMode,
    /// Hogwild worker count.
    pub workers: usize,
    pub seed: u64,
    pub init_scale: f32,
    pub target_rmse: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            f: 100,
            lambda: 0.05,
            epochs: 20,
            lr: 0.01,
            decay: 0.0,
            mode: SgdMode::Serial,
            workers: 1,
            seed: 0,
            init_scale: 0.1,
            target_rmse: None,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("f and epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::InvalidArgument(format!("decay must be >= 0, got {}", self.decay)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.mode == SgdMode::Hogwild && self.workers == 0 {
            return Err(Error::InvalidArgument("hogwild needs at least one worker".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f32 {
        self.lr / (1.0 + self.decay * epoch as f32)
    }

    pub fn label(&self) -> &'static str {
        match self.mode {
            SgdMode::Serial => "sgd-serial",
            SgdMode::Hogwild => "sgd-hogwild",
        }
    }
}

/// One sample update with simultaneous semantics: both vectors move using
/// their values from before the step.
///
/// `e = xᵀθ − r`, `x' = x − α(eθ + λx)`, `θ' = θ − α(ex + λθ)`.
/// Returns `Err(Divergence)` (with `epoch` 0) on a non-finite result.
pub fn sgd_step(x: &mut [f32], theta: &mut [f32], rating: f32, lr: f32, lambda: f32) -> Result<()> {
    let e = dot(x, theta) - rating;
    for (xk, tk) in x.iter_mut().zip(theta.iter_mut()) {
        let (x0, t0) = (*xk, *tk);
        *xk = x0 - lr * (e * t0 + lambda * x0);
        *tk = t0 - lr * (e * x0 + lambda * t0);
    }
    if e.is_finite() && x.iter().chain(theta.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch: 0,
            learning_rate: lr,
        })
    }
}

fn shuffled_order(len: usize, seed: u64, epoch: usize) -> Vec<u32> {
    let mut order: Vec<u32> = (0..len as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SHUFFLE_STREAM + epoch as u64));
    order.shuffle(&mut rng);
    order
}

/// Factor storage for lock-free workers.
struct SharedFactors {
    f: usize,
    data: Vec<AtomicU32>,
}

impl SharedFactors {
    fn from_matrix(m: &FactorMatrix) -> Self {
        SharedFactors {
            f: m.f(),
            data: m.as_slice().iter().map(|v| AtomicU32::new(v.to_bits())).collect(),
        }
    }

    fn load_row(&self, i: usize, out: &mut [f32]) {
        for (o, a) in out.iter_mut().zip(&self.data[i * self.f..(i + 1) * self.f]) {
            *o = f32::from_bits(a.load(Ordering::Relaxed));
        }
    }

    fn store_row(&self, i: usize, src: &[f32]) {
        for (s, a) in src.iter().zip(&self.data[i * self.f..(i + 1) * self.f]) {
            a.store(s.to_bits(), Ordering::Relaxed);
        }
    }

    fn write_back(self, m: &mut FactorMatrix) {
        for (dst, a) in m.as_mut_slice().iter_mut().zip(self.data) {
            *dst = f32::from_bits(a.into_inner());
        }
    }
}

/// One pass over `samples` at epoch `epoch` (0-based).
pub fn sgd_epoch(
    samples: &[RatingTriple],
    x: &mut FactorMatrix,
    theta: &mut FactorMatrix,
    cfg: &SgdConfig,
    epoch: usize,
) -> Result<()> {
    if x.f() != theta.f() || x.f() != cfg.f {
        return Err(Error::DimensionMismatch("factor widths disagree with the config".into()));
    }
    if let Some(t) = samples
        .iter()
        .find(|t| t.user as usize >= x.rows() || t.item as usize >= theta.rows())
    {
        return Err(Error::DimensionMismatch(format!("sample ({}, {}) outside the factors", t.user, t.item)));
    }
    let order = shuffled_order(samples.len(), cfg.seed, epoch);
    let lr = cfg.learning_rate(epoch);
    let diverged = |_: Error| Error::Divergence {
        epoch: epoch + 1,
        learning_rate: lr,
    };

    match cfg.mode {
        SgdMode::Serial => {
            for &k in &order {
                let t = samples[k as usize];
                sgd_step(x.row_mut(t.user as usize), theta.row_mut(t.item as usize), t.rating, lr, cfg.lambda)
                    .map_err(diverged)?;
            }
            Ok(())
        }
        SgdMode::Hogwild => {
            let workers = cfg.workers.max(1);
            let shared_x = SharedFactors::from_matrix(x);
            let shared_t = SharedFactors::from_matrix(theta);
            let failed = AtomicBool::new(false);
            let f = cfg.f;
            std::thread::scope(|s| {
                for w in 0..workers {
                    let block = &order[w * order.len() / workers..(w + 1) * order.len() / workers];
                    let (sx, st, failed) = (&shared_x, &shared_t, &failed);
                    s.spawn(move || {
                        let mut xb = vec![0.0f32; f];
                        let mut tb = vec![0.0f32; f];
                        for &k in block {
                            if failed.load(Ordering::Relaxed) {
                                return;
                            }
                            let t = samples[k as usize];
                            sx.load_row(t.user as usize, &mut xb);
                            st.load_row(t.item as usize, &mut tb);
                            if sgd_step(&mut xb, &mut tb, t.rating, lr, cfg.lambda).is_err() {
                                failed.store(true, Ordering::Relaxed);
                                return;
                            }
                            sx.store_row(t.user as usize, &xb);
                            st.store_row(t.item as usize, &tb);
                        }
                    });
                }
            });
            shared_x.write_back(x);
            shared_t.write_back(theta);
            if failed.into_inner() {
                Err(Error::Divergence {
                    epoch: epoch + 1,
                    learning_rate: lr,
                })
            } else {
                Ok(())
            }
        }
    }
}

/// Trains with SGD and reports in the same schema as ALS.
pub fn sgd_train(train: &SparseRatings, test: &[RatingTriple], cfg: &SgdConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut x = init_factors(train.m(), cfg.f, cfg.init_scale, derive_seed(cfg.seed, X_INIT_STREAM))?;
    let mut theta = init_factors(train.n(), cfg.f, cfg.init_scale, derive_seed(cfg.seed, THETA_INIT_STREAM))?;
    let samples = train.to_triples();
    let roofline = roofline_estimate(train.m(), train.n(), train.nnz(), cfg.f, 0);
    let mut report = TrainReport::new();
    report.empty_rows = (0..train.m()).filter(|&u| train.csr().lane_len(u) == 0).count();
    report.empty_cols = (0..train.n()).filter(|&v| train.csc().lane_len(v) == 0).count();

    for k in 0..cfg.epochs {
        let mut rec = EpochRecord::new(k + 1, "sgd", cfg.label());
        rec.learning_rate = Some(cfg.learning_rate(k));
        let t = Instant::now();
        sgd_epoch(&samples, &mut x, &mut theta, cfg, k)?;
        rec.phases.update = secs(t.elapsed());

        let t = Instant::now();
        rec.train_objective = objective(&x, &theta, train, cfg.lambda)?;
        if !test.is_empty() {
            rec.test_rmse = Some(rmse(&x, &theta, test)?);
        }
        rec.phases.eval = secs(t.elapsed());
        rec.sgd_flops = roofline.sgd_flops;
        rec.sgd_bytes = roofline.sgd_bytes;

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
        initial_objective: None,
    })
}
