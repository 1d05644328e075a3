//! Physics-informed neural network solver for the 1D coupled
//! electro-elastodynamic (piezoelectric, stress-charge form) system.
//!
//! Module map:
//! - [`autodiff`]: reverse-mode differentiation with nested gradients
//! - [`model`]: tanh MLP, hard-constraint output transform, checkpoints
//! - [`physics`]: material parameters, residuals, exact solution
//! - [`sampler`]: seeded collocation sets and mini-batches
//! - [`loss`]: weighted PDE/BC/IC loss and its parameter gradient
//! - [`optim`]: Adam/AdamW and L-BFGS with strong-Wolfe line search
//! - [`trainer`]: three-stage schedule with early stopping
//! - [`evaluator`]: dense-grid error reports and CSV export
//! - [`fdm`]: characteristic-split finite-difference reference solver
//! - [`gradcheck`]: finite-difference audits of network derivatives

// `!(x > 0.0)` is used on purpose so that NaN fails positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod evaluator;
pub mod fdm;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod optim;
pub mod physics;
pub mod real;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
pub use real::{Precision, Real};
