//! Numerical laboratory for critical windows of diffusion models on
//! Gaussian-mixture data.
//!
//! Everything runs on exact mixture scores: forward Ornstein–Uhlenbeck
//! noising in closed form, reverse-SDE denoising with the true score, the
//! noise-then-denoise "targeted reverse" process, closed-form window bounds,
//! hierarchical mixture trees, and the NoiseDenoise membership attack.
//!
//! The mixture, simulation, divergence and bound code is generic over
//! [`Scalar`] (`f32` or `f64`); the aliases below fix the common choices.

// `!(x >= lo)` is deliberate throughout: unlike `x < lo` it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod divergence;
pub mod error;
pub mod gmm;
pub mod hierarchy;
pub mod io;
pub mod linalg;
pub mod mia;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod windows;

pub use error::{Error, Result};
pub use gmm::{Covariance, SubsetSpec};
pub use rng::StreamKey;
pub use scalar::Scalar;

pub type Mixture = gmm::Mixture<f64>;
pub type Mixture32 = gmm::Mixture<f32>;
pub type GaussianComponent = gmm::GaussianComponent<f64>;
pub type GaussianComponent32 = gmm::GaussianComponent<f32>;
pub type SeparationStats = gmm::SeparationStats<f64>;
pub type AssumptionParams = gmm::AssumptionParams<f64>;
pub type TrajectoryConfig = sim::TrajectoryConfig<f64>;
pub type WindowEstimate = windows::WindowEstimate<f64>;
