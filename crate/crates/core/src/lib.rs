//! Numerical laboratory for the dynamics and stationary behaviour of
//! stochastic gradient descent on small models with rescaling symmetry.
//!
//! The crate is organized around six building blocks:
//!
//! * [`moments`] — synthetic scalar datasets and the five data moments
//!   (`alpha1..alpha3`, `beta1`, `beta2`) that parameterize both the loss
//!   landscape and the gradient noise of every model studied here.
//! * [`models`] — per-sample losses and exact analytic gradients for
//!   diagonal linear networks of arbitrary depth/width, two-layer ReLU
//!   networks, and small tanh models.
//! * [`dynamics`] — discrete SGD / GD / Langevin steppers, an
//!   Euler–Maruyama integrator for the gradient-covariance SDE, and a
//!   reduced one-dimensional SDE for the model output `v`.
//! * [`balance`] — empirical layer noise matrices, the balance residual
//!   `u^T C1 u - w^T C2 w`, the balanced rescaling factor, norm-ratio
//!   bounds, and the per-neuron ReLU full-rank check.
//! * [`analytic`] — closed-form stationary densities (depth 0, depth 1,
//!   general depth, infinite depth, and the degenerate-data special
//!   cases), critical temperatures, regime classification, the maximum
//!   likelihood point, tail exponents, and the Gibbs reference density.
//! * [`stats`] — histograms, Kolmogorov–Smirnov distance against an
//!   analytic density, KL estimates with support-mismatch detection, and
//!   power-law tail fitting.

pub mod analytic;
pub mod balance;
pub mod dynamics;
pub mod models;
pub mod moments;
pub mod quadrature;
pub mod stats;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate sample set: need at least 2 samples, got {0}")]
    DegenerateSampleSet(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("diverged at step {step}")]
    Diverged { step: usize },
    #[error("no rescaling symmetry: {0}")]
    NoRescalingSymmetry(String),
    #[error("degenerate: both noise traces vanish")]
    DegenerateNoiseTraces,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("use special-case density: delta <= 0")]
    DeltaNotPositive,
    #[error("quadrature failed to converge: {0}")]
    Quadrature(String),
    #[error("unsupported special case: {0}; supported cases are InterpolationD1 and DeltaZeroC")]
    UnsupportedCase(String),
    #[error("insufficient tail mass: {0} points in fit range, need at least {1}")]
    InsufficientTail(usize, usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
