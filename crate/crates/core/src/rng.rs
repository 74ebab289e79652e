//! Seeded random-variate primitives used by every sampler update.
//!
//! All randomness flows through an explicit [`RngStream`] so a run is fully
//! determined by its seed. The generator is ChaCha12 seeded via
//! `seed_from_u64`: identical seeds reproduce identical draw sequences on
//! every platform. Streams are single-owner; parallel work splits child
//! streams up front with [`RngStream::split`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// A seeded, splittable random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// The seed this stream was created with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent child stream, advancing this one.
    pub fn split(&mut self) -> Self {
        Self::new(self.rng.random::<u64>())
    }

    /// Uniform draw on [0, 1).
    pub fn draw_uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer on `lo..=hi`.
    pub fn draw_uniform_int(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    pub fn draw_standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// One draw from N(mean, sd²).
    pub fn draw_normal(&mut self, mean: f64, sd: f64) -> Result<f64> {
        if !mean.is_finite() || !sd.is_finite() || sd <= 0.0 {
            return Err(Error::ParamDomain(format!(
                "draw_normal needs finite mean and sd > 0, got mean={mean}, sd={sd}"
            )));
        }
        Ok(mean + sd * self.draw_standard_normal())
    }

    /// One draw from the Gaussian with precision matrix `Q` and linear term `b`,
    /// i.e. N(Q⁻¹b, Q⁻¹). Goes through the Cholesky factor of `Q` (solve, never
    /// an explicit inverse). `block` names the caller in error messages.
    pub fn draw_mv_normal_from_precision(
        &mut self,
        precision: &DMatrix<f64>,
        linear_term: &DVector<f64>,
        block: &str,
    ) -> Result<DVector<f64>> {
        let n = precision.nrows();
        if precision.ncols() != n || linear_term.len() != n {
            return Err(Error::Shape(format!(
                "{block}: precision is {}x{}, linear term has length {}",
                precision.nrows(),
                precision.ncols(),
                linear_term.len()
            )));
        }
        let chol = precision.clone().cholesky().ok_or_else(|| Error::Numerical {
            block: block.to_string(),
            detail: "precision matrix is not symmetric positive definite".to_string(),
        })?;
        let mean = chol.solve(linear_term);
        let z = DVector::from_fn(n, |_, _| self.draw_standard_normal());
        // Q = LLᵀ, so Lᵀv = z gives cov(v) = L⁻ᵀL⁻¹ = Q⁻¹.
        let v = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Numerical {
                block: block.to_string(),
                detail: "triangular solve failed on the Cholesky factor".to_string(),
            })?;
        Ok(mean + v)
    }

    /// One draw from Gamma(shape, rate); mean shape/rate, variance shape/rate².
    pub fn draw_gamma(&mut self, shape: f64, rate: f64) -> Result<f64> {
        if !shape.is_finite() || !rate.is_finite() || shape <= 0.0 || rate <= 0.0 {
            return Err(Error::ParamDomain(format!(
                "draw_gamma needs shape > 0 and rate > 0, got shape={shape}, rate={rate}"
            )));
        }
        let gamma = Gamma::new(shape, 1.0 / rate).map_err(|e| {
            Error::ParamDomain(format!("draw_gamma({shape}, {rate}): {e}"))
        })?;
        Ok(gamma.sample(&mut self.rng))
    }

    /// One draw from Dirichlet(alpha) via normalized Gamma variates.
    pub fn draw_dirichlet(&mut self, alpha: &[f64]) -> Result<Vec<f64>> {
        if alpha.is_empty() {
            return Err(Error::ParamDomain("draw_dirichlet: empty alpha".into()));
        }
        if alpha.iter().any(|&a| !a.is_finite() || a <= 0.0) {
            return Err(Error::ParamDomain(format!(
                "draw_dirichlet needs all alpha > 0, got {alpha:?}"
            )));
        }
        // Tiny shapes can underflow every component to zero; retry a few times.
        for _ in 0..8 {
            let draws: Vec<f64> = alpha
                .iter()
                .map(|&a| self.draw_gamma(a, 1.0))
                .collect::<Result<_>>()?;
            let total: f64 = draws.iter().sum();
            if total > 0.0 {
                return Ok(draws.into_iter().map(|g| g / total).collect());
            }
        }
        Err(Error::Numerical {
            block: "dirichlet".to_string(),
            detail: format!("all gamma components underflowed for alpha={alpha:?}"),
        })
    }

    /// One categorical draw; returns a category index in 1..=K with
    /// probability weights_k / Σ weights.
    pub fn draw_categorical(&mut self, weights: &[f64]) -> Result<usize> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::DegenerateWeights(format!(
                "categorical weights {weights:?}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateWeights(
                "categorical weights sum to zero".to_string(),
            ));
        }
        let target = self.draw_uniform() * total;
        let mut cum = 0.0;
        let mut last_positive = 0;
        for (idx, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last_positive = idx;
            }
            cum += w;
            if target < cum && w > 0.0 {
                return Ok(idx + 1);
            }
        }
        // Floating-point edge: target landed on the upper boundary.
        Ok(last_positive + 1)
    }
}
