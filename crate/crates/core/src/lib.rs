//! Randomized sketching for ordinary least squares.
//!
//! The crate builds sketching operators (leverage-score row sampling with or
//! without rescaling, sub-Gaussian projections, subsampled randomized
//! Hadamard transforms), evaluates the worst-case, prediction-efficiency and
//! residual-efficiency criteria of the sketched estimator in closed form
//! through the oblique projection `U (SU)† S`, and checks the resulting
//! quantities against Monte Carlo simulation and published upper bounds.
//!
//! Module map:
//!
//! - [`linalg`]: SVD, pseudo-inverse, rank, norms, fast Walsh–Hadamard transform
//! - [`model`]: datasets, linear model, OLS and sketched solvers
//! - [`sketch`]: sketch specifications and structured operators
//! - [`leverage`]: exact/approximate leverage, sampling mixtures, heavy hitters
//! - [`criteria`]: closed-form and Monte Carlo criteria, η condition, bounds
//! - [`datagen`]: Gaussian and exact k-heavy-hitter designs
//! - [`harness`]: experiment grids, trial rows, aggregation
//! - [`verify`]: the built-in acceptance checks

pub mod criteria;
pub mod datagen;
pub mod error;
pub mod fmt;
pub mod harness;
pub mod leverage;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod sketch;
pub mod verify;

pub use error::{Error, Result};
