//! Robust phase retrieval from amplitude measurements with sparse outliers.
//!
//! The recovery method alternates between fixing measurement signs from the
//! current iterate and solving the resulting least-absolute-deviation (LAD)
//! regression
//!
//! ```text
//! x_{k+1} ∈ argmin_x Σ_i | ⟨a_i, x⟩ − sign(⟨a_i, x_k⟩) b_i |
//! ```
//!
//! Three inner solvers are provided: ADMM on the LAD problem with a cached
//! pseudoinverse, ADMM on the standard-form linear program with a cached
//! inverse factor, and a restarted subgradient method. The [`harness`]
//! module contains the Monte-Carlo experiment protocols and [`theory`] the
//! constants of the local convergence guarantee.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod inner;
pub mod measurement;
pub mod rng;
pub mod robust_am;
pub mod theory;

pub use error::{Error, Result};
