//! Two-stage kernel instrumental-variable regression with observed covariates.
//!
//! The estimator regresses an outcome on a treatment `X` and a covariate `O`
//! when `X` is endogenous and an instrument `Z` is available. Stage I learns
//! the conditional mean embedding of `X` given `(Z, O)`; Stage II is a kernel
//! ridge regression on the embedded features.

// Negated float comparisons are deliberate: they send NaN down the error path.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod kernel;
pub mod model_file;
pub mod quadrature;
pub mod rng;
pub mod schedule;
pub mod solver;
pub mod spectral;
pub mod synthdata;

pub use error::{KivoError, Result};
pub use kernel::{KernelBlock, KernelFamily, KernelSpec, MaternNu, Points};
