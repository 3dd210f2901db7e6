//! Survival-energy mortality modelling with functional data analysis.
//!
//! The crate models a cohort's mortality as the first-passage law of a latent
//! "survival energy" process and provides the full estimation/forecasting
//! pipeline around it:
//!
//! - closed-form mortality curves for the diffusion (ID) and inverse-Gaussian
//!   (IG) model variants ([`mortality`]),
//! - ingestion of cohort life tables ([`hmd`]),
//! - pointwise recovery of the latent key function from empirical mortality
//!   ([`inversion`]),
//! - B-spline smoothing into functional data ([`bspline`], [`smooth`]),
//! - functional principal component analysis with a Gram-corrected
//!   eigenproblem ([`fpca`]),
//! - ARIMA forecasting of component scores with prediction intervals
//!   ([`arima`]),
//! - interval-constrained refitting of forecasted scores against partially
//!   observed cohorts ([`modify`]),
//! - Monte Carlo and analytic cross-checks of every closed form
//!   ([`simulate`], [`oracle`], [`verify`]),
//! - MSE evaluation and comparison tables ([`evaluate`]),
//! - end-to-end orchestration ([`pipeline`]).

pub mod arima;
pub mod bspline;
pub mod evaluate;
pub mod fpca;
pub mod hmd;
pub mod inversion;
pub mod modify;
pub mod mortality;
pub mod oracle;
mod optim;
pub mod params;
pub mod pipeline;
pub mod simulate;
pub mod smooth;
pub mod special;
pub mod verify;

pub use params::{KeyKind, SemParams};
