//! Optical intensity channel with input-dependent Gaussian noise:
//! `y = h x + √(h x) z₁ + z₀`, `z₀ ~ N(0, σ²)`, `z₁ ~ N(0, ς² σ²)`.
//!
//! Conditioned on the received intensity `r = h x`, `y ~ N(r, (1 + r ς²) σ²)`.

use libm::erfc;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Standard thermal noise floor.
pub const DEFAULT_SIGMA_SQ_DBM: f64 = -104.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Input-independent variance σ².
    pub sigma_sq: f64,
    /// Ratio ς² of input-dependent to input-independent variance.
    pub varsigma_sq: f64,
}

impl NoiseModel {
    pub fn new(sigma_sq: f64, varsigma_sq: f64) -> Result<Self> {
        if !(sigma_sq.is_finite() && sigma_sq > 0.0) {
            return domain(format!("noise variance {sigma_sq} must be positive"));
        }
        if !(varsigma_sq.is_finite() && varsigma_sq >= 0.0) {
            return domain(format!("input-dependent ratio {varsigma_sq} must be non-negative"));
        }
        Ok(Self { sigma_sq, varsigma_sq })
    }

    /// Noise floor given in dBm and the ratio given as ς (not squared).
    pub fn from_dbm(sigma_sq_dbm: f64, varsigma: f64) -> Result<Self> {
        Self::new(dbm_to_watts(sigma_sq_dbm), varsigma * varsigma)
    }

    pub fn standard(varsigma: f64) -> Self {
        Self::from_dbm(DEFAULT_SIGMA_SQ_DBM, varsigma).expect("standard noise is valid")
    }

    /// `1 + r ς²`: variance of `y` at received intensity `r`, in units of σ².
    #[inline]
    pub fn variance_factor(&self, r: f64) -> f64 {
        1.0 + r * self.varsigma_sq
    }

    #[inline]
    pub fn variance(&self, r: f64) -> f64 {
        self.variance_factor(r) * self.sigma_sq
    }

    pub fn with_varsigma(&self, varsigma: f64) -> Result<Self> {
        Self::new(self.sigma_sq, varsigma * varsigma)
    }
}

/// Operating point expressed as the electrical SNR of the strongest LED,
/// `γ = (h_max P_t)² / σ²`.
///
/// With physical noise floors around 10⁻¹⁴ W² and gains around 10⁻⁵ the
/// ratio `P_t/σ²` carries no usable scale, so sweeps are parameterised by
/// the received SNR and mapped back to a transmit power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint {
    pub gamma: f64,
}

impl SnrPoint {
    pub fn from_db(db: f64) -> Self {
        Self { gamma: 10f64.powf(db / 10.0) }
    }

    pub fn db(&self) -> f64 {
        10.0 * self.gamma.log10()
    }

    /// Transmit power that realises this SNR on the given peak gain.
    pub fn transmit_power(&self, h_max: f64, noise: &NoiseModel) -> Result<f64> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return domain(format!("SNR {} must be positive", self.gamma));
        }
        if !(h_max > 0.0) {
            return domain("peak channel gain must be positive");
        }
        Ok((self.gamma * noise.sigma_sq).sqrt() / h_max)
    }

    pub fn from_transmit_power(pt: f64, h_max: f64, noise: &NoiseModel) -> Self {
        Self { gamma: (h_max * pt).powi(2) / noise.sigma_sq }
    }
}

fn received(h: f64, x: f64) -> Result<f64> {
    let r = h * x;
    if !(r.is_finite() && r >= 0.0) || h < 0.0 || x < 0.0 {
        return domain(format!("received intensity h·x = {h}·{x} must be non-negative"));
    }
    Ok(r)
}

pub fn sample_output<R: Rng + ?Sized>(h: f64, x: f64, noise: &NoiseModel, rng: &mut R) -> Result<f64> {
    let r = received(h, x)?;
    Ok(sample_received(r, noise, rng))
}

/// Same as [`sample_output`] for an already validated received intensity.
#[inline]
pub fn sample_received<R: Rng + ?Sized>(r: f64, noise: &NoiseModel, rng: &mut R) -> f64 {
    let sigma = noise.sigma_sq.sqrt();
    let z1: f64 = rng.sample(StandardNormal);
    let z0: f64 = rng.sample(StandardNormal);
    r + r.sqrt() * noise.varsigma_sq.sqrt() * sigma * z1 + sigma * z0
}

pub fn cond_pdf(y: f64, h: f64, x: f64, noise: &NoiseModel) -> Result<f64> {
    let r = received(h, x)?;
    let v = noise.variance(r);
    Ok((-(y - r).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt())
}

/// Gaussian tail probability `Q(u) = ½ erfc(u/√2)`.
pub fn q_function(u: f64) -> f64 {
    0.5 * erfc(u / std::f64::consts::SQRT_2)
}

/// Pairwise error probability of mistaking `x_i` for `x_j` on gain `h`,
/// with the noise variance fixed at the transmitted point.
pub fn pep(x_i: f64, x_j: f64, h: f64, noise: &NoiseModel) -> Result<f64> {
    if x_i == x_j {
        return domain("pairwise error probability needs distinct symbols");
    }
    let r_i = received(h, x_i)?;
    let r_j = received(h, x_j)?;
    let d = (r_i - r_j).abs();
    Ok(q_function(d / (2.0 * noise.variance(r_i).sqrt())))
}
