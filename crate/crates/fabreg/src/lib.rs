//! Adaptive constant-coverage confidence intervals for linear regression
//! coefficients.
//!
//! The usual t-interval around an OLS estimate has exact 1−α coverage and a
//! width that does not depend on the unknown coefficients. This crate builds
//! an alternative family of intervals, indexed by a *spending function*
//! allocating type-I error asymmetrically across the parameter space, that
//! keeps the exact coverage while shrinking the average width when many
//! coefficients sit near a common value. The spending function is estimated
//! from a part of the data that is statistically independent of the
//! coefficient being covered, so the coverage guarantee is non-asymptotic.
//!
//! Module map:
//!
//! - [`dist`] — normal / Student-t kernels, exact binomial interval, seeded
//!   samplers.
//! - [`ols`] — the linear-model fit and the per-coefficient projection
//!   decomposition that produces independent adaptation statistics.
//! - [`spending`] — spending functions, interval constructions and the
//!   endpoint equation solver.
//! - [`eb`] — moment and marginal maximum-likelihood estimation of the
//!   prior scale from the rotated projection coordinates.
//! - [`pipeline`] — the per-dataset orchestration, including group-wise
//!   adaptation.
//! - [`sim`] — Monte Carlo coverage and width studies.

pub mod dist;
pub mod eb;
pub mod error;
mod linalg;
pub mod ols;
pub mod pipeline;
pub mod sim;
pub mod spending;

pub use error::{Error, Result};
