use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense row-major latent-factor matrix (`rows x f`), single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    rows: usize,
    f: usize,
    data: Vec<f32>,
}

impl FactorMatrix {
    pub fn zeros(rows: usize, f: usize) -> Self {
        FactorMatrix {
            rows,
            f,
            data: vec![0.0; rows * f],
        }
    }

    pub fn from_vec(rows: usize, f: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * f {
            return Err(Error::DimensionMismatch(format!(
                "{} values cannot form a {rows}x{f} factor matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "factor entry {pos} is not finite"
            )));
        }
        Ok(FactorMatrix { rows, f, data })
    }

    /// Entries drawn i.i.d. from `uniform[-scale, scale]`; reproducible per seed.
    pub fn random_uniform(rows: usize, f: usize, scale: f32, seed: u64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "init scale must be positive and finite, got {scale}"
            )));
        }
        let dist = Uniform::new_inclusive(-scale, scale)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * f).map(|_| dist.sample(&mut rng)).collect();
        Ok(FactorMatrix { rows, f, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn f(&self) -> usize {
        self.f
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.f..(i + 1) * self.f]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.f..(i + 1) * self.f]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt()
    }
}

/// Initial factors for ALS and SGD: `uniform[-init_scale, init_scale]`.
pub fn init_factors(rows: usize, f: usize, init_scale: f32, seed: u64) -> Result<FactorMatrix> {
    FactorMatrix::random_uniform(rows, f, init_scale, seed)
}
