//! Closed-form mortality functions of the two survival-energy models.
//!
//! Both models express the probability of death by age `t` through a scalar
//! "key" value: the integrated drift `M(t) < 0` for the diffusion model and
//! the cumulative energy-loss level `Λ(t) ≥ 0` for the inverse-Gaussian model.
//! Because the curves depend on time only through the key, both functions
//! take the key value directly and are pure scalar maps.

use crate::params::SemParams;
use crate::special::{log_norm_cdf, norm_cdf};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MortalityError {
    #[error("diffusion key must be negative, got {0}")]
    KeyNotNegative(f64),
    #[error("inverse-Gaussian key must be nonnegative, got {0}")]
    KeyNegative(f64),
    #[error("conditioning probability must be below 1, got q(S) = {0}")]
    DegenerateConditioning(f64),
    #[error("mortality must be nondecreasing: q(t) = {q_t} < q(S) = {q_s}")]
    MonotonicityViolation { q_t: f64, q_s: f64 },
}

/// Death probability of the diffusion model for drift integral `key_m < 0`.
///
/// The dispersion integral is tied to the drift by the fixed ratio
/// `κ = M/S`, so `S = key_m / κ`. The reflection term `e^{-κx}Φ(·)` is a
/// product of an enormous exponential and a vanishing tail probability
/// (`e^{250}` times `Φ(-22)` at the defaults) and is evaluated in log space.
pub fn q_id(key_m: f64, p: &SemParams) -> Result<f64, MortalityError> {
    if !(key_m < 0.0) {
        return Err(MortalityError::KeyNotNegative(key_m));
    }
    let x = p.x();
    let s = key_m / p.kappa();
    let denom = (2.0 * s).sqrt();
    let first = norm_cdf(-(x + key_m) / denom);
    let second = (-p.kappa() * x + log_norm_cdf((-x + key_m) / denom)).exp();
    Ok((first + second).clamp(0.0, 1.0))
}

/// Death probability of the inverse-Gaussian model for energy-loss level
/// `key_l ≥ 0`.
///
/// The subtracted term `e^{2σΛ}Φ(-·)` is evaluated in log space for the same
/// overflow reason as in [`q_id`].
pub fn q_ig(key_l: f64, p: &SemParams) -> Result<f64, MortalityError> {
    if !(key_l >= 0.0) {
        return Err(MortalityError::KeyNegative(key_l));
    }
    if key_l == 0.0 {
        return Ok(0.0);
    }
    let x = p.x();
    let a = (p.sigma() / x).sqrt();
    let first = norm_cdf(a * (key_l - x));
    let second = (2.0 * p.sigma() * key_l + log_norm_cdf(-a * (key_l + x))).exp();
    Ok((first - second).clamp(0.0, 1.0))
}

/// Death probability for the given `kind`'s key value.
pub fn q_key(kind: crate::params::KeyKind, key: f64, p: &SemParams) -> Result<f64, MortalityError> {
    match kind {
        crate::params::KeyKind::Diffusion => q_id(key, p),
        crate::params::KeyKind::InverseGaussian => q_ig(key, p),
    }
}

/// Mortality conditional on survival to the conditioning age:
/// `(q(t) - q(S)) / (1 - q(S))`.
pub fn conditional(q_t: f64, q_s: f64) -> Result<f64, MortalityError> {
    if q_s >= 1.0 {
        return Err(MortalityError::DegenerateConditioning(q_s));
    }
    if q_t < q_s {
        return Err(MortalityError::MonotonicityViolation { q_t, q_s });
    }
    Ok(((q_t - q_s) / (1.0 - q_s)).clamp(0.0, 1.0))
}
