//! Numerical laboratory for semilinear fractional heat equations
//! `∂_t u + (-Δ)^{θ/2} u = f(u)` with singular initial data.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// quadrature tables are copied at full published precision
#![allow(clippy::excessive_precision)]

pub mod error;
pub mod expr;
pub mod grid;
pub mod kernel;
pub mod nonlinearity;
pub mod numeric;
pub mod quadrature;
pub mod semigroup;
pub mod solvability;
pub mod solver;
pub mod special;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
