//! Simulation and statistical verification toolkit for slow-fast stochastic
//! systems whose slow component is perturbed by a small fractional Brownian
//! noise.
//!
//! The crate is organized bottom-up:
//!
//! - [`fbm`]: exact fractional Brownian motion / fractional Gaussian noise
//!   sampling and the reproducing-kernel inner product of the fBm.
//! - [`model`] and [`sde`]: model definitions, condition probes and the
//!   two-scale Euler integrator, plus Itô-formula and exponential-moment
//!   diagnostics.
//! - [`averaging`]: invariant measures, averaged coefficients, the limit
//!   ODE, Poisson correctors and the strong / ergodic error tables.
//! - [`fluctuations`]: the rescaled fluctuation process, its decomposition,
//!   the limiting mixed SDE and two-sample distribution comparison.
//! - [`extended`]: the model with a singular `b` term and an intermediate
//!   `g` term in the fast drift, in both scaling regimes.
//! - [`experiments`]: configuration, the coefficient expression language,
//!   slope fitting and the experiment pipelines behind the CLI.

// `!(a > b)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod error;
pub mod experiments;
pub mod extended;
pub mod fbm;
pub mod fluctuations;
pub mod grid;
pub mod model;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, ParseError, Result};
pub use fbm::{HurstParameter, NoiseBundle, NoiseSource};
pub use grid::UniformGrid;
pub use model::{ModelSpec, ScaleParams};
