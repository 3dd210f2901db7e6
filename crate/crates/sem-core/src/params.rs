//! Model constants shared across the pipeline.

use thiserror::Error;

/// Which survival-energy model a key function belongs to.
///
/// `Diffusion` keys are the integrated drift `M(t)` of the diffusion model and
/// are strictly negative; `InverseGaussian` keys are the nonnegative
/// increasing function `Λ(t)` driving the inverse-Gaussian energy loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyKind {
    Diffusion,
    InverseGaussian,
}

impl KeyKind {
    /// Short tag used in dumps and file names.
    pub fn tag(self) -> &'static str {
        match self {
            KeyKind::Diffusion => "ID",
            KeyKind::InverseGaussian => "IG",
        }
    }

    pub fn parse_tag(s: &str) -> Option<Self> {
        match s {
            "ID" => Some(KeyKind::Diffusion),
            "IG" => Some(KeyKind::InverseGaussian),
            _ => None,
        }
    }

    /// True when `key` lies in the admissible domain for this kind
    /// (`M < 0`, `Λ ≥ 0`).
    pub fn admissible(self, key: f64) -> bool {
        match self {
            KeyKind::Diffusion => key < 0.0,
            KeyKind::InverseGaussian => key >= 0.0,
        }
    }
}

impl std::fmt::Display for KeyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("initial energy x must be positive, got {0}")]
    NonPositiveX(f64),
    #[error("drift/dispersion ratio kappa must be negative, got {0}")]
    NonNegativeKappa(f64),
    #[error("shape scale sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("conditioning age {s} must be below terminal age {w}")]
    AgeOrder { s: u32, w: u32 },
}

/// Fixed model constants: initial energy, drift/dispersion ratio, IG shape
/// scale, and the age window over which key functions are estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemParams {
    x: f64,
    kappa: f64,
    sigma: f64,
    cond_age: u32,
    terminal_age: u32,
}

impl SemParams {
    pub fn new(x: f64, kappa: f64, sigma: f64, cond_age: u32, terminal_age: u32) -> Result<Self, ParamsError> {
        if !(x > 0.0) {
            return Err(ParamsError::NonPositiveX(x));
        }
        if !(kappa < 0.0) {
            return Err(ParamsError::NonNegativeKappa(kappa));
        }
        if !(sigma > 0.0) {
            return Err(ParamsError::NonPositiveSigma(sigma));
        }
        if cond_age >= terminal_age {
            return Err(ParamsError::AgeOrder { s: cond_age, w: terminal_age });
        }
        Ok(Self { x, kappa, sigma, cond_age, terminal_age })
    }

    /// Initial survival energy `x`.
    pub fn x(&self) -> f64 {
        self.x
    }

    /// Drift/dispersion ratio `κ < 0` of the diffusion model.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Shape scale `σ > 0` of the inverse-Gaussian model.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Conditioning age `S`: estimation works with mortality conditional on
    /// survival to this age.
    pub fn cond_age(&self) -> u32 {
        self.cond_age
    }

    /// Terminal age `w`: the last age carried through the pipeline.
    pub fn terminal_age(&self) -> u32 {
        self.terminal_age
    }

    pub fn with_ages(mut self, cond_age: u32, terminal_age: u32) -> Result<Self, ParamsError> {
        if cond_age >= terminal_age {
            return Err(ParamsError::AgeOrder { s: cond_age, w: terminal_age });
        }
        self.cond_age = cond_age;
        self.terminal_age = terminal_age;
        Ok(self)
    }
}

impl Default for SemParams {
    /// The standard constants: `x = 1000`, `κ = −0.25`, `σ = 0.001`,
    /// ages 20 through 110.
    fn default() -> Self {
        Self { x: 1000.0, kappa: -0.25, sigma: 0.001, cond_age: 20, terminal_age: 110 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_standard_setup() {
        let p = SemParams::default();
        assert_eq!(p.x(), 1000.0);
        assert_eq!(p.kappa(), -0.25);
        assert_eq!(p.sigma(), 0.001);
        assert_eq!(p.cond_age(), 20);
        assert_eq!(p.terminal_age(), 110);
    }

    #[test]
    fn rejects_bad_constants() {
        assert!(SemParams::new(0.0, -0.25, 0.001, 20, 110).is_err());
        assert!(SemParams::new(1000.0, 0.25, 0.001, 20, 110).is_err());
        assert!(SemParams::new(1000.0, -0.25, 0.0, 20, 110).is_err());
        assert!(SemParams::new(1000.0, -0.25, 0.001, 110, 110).is_err());
        assert!(SemParams::new(1000.0, -0.25, 0.001, 20, 110).is_ok());
    }

    #[test]
    fn key_domains() {
        assert!(KeyKind::Diffusion.admissible(-1e-12));
        assert!(!KeyKind::Diffusion.admissible(0.0));
        assert!(KeyKind::InverseGaussian.admissible(0.0));
        assert!(!KeyKind::InverseGaussian.admissible(-1e-12));
    }
}
