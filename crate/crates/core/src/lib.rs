//! Positive solutions of the indefinite-weight Neumann problem
//! `u'' + (λ a⁺(t) − μ a⁻(t)) g(u) = 0`, `u'(0) = u'(T) = 0`, by shooting in
//! a planar phase space, together with a mapper of the solvability region in
//! the `(λ, μ)` plane.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod ivp;
pub mod nonlin;
pub mod optim;
pub mod quad;
pub mod region;
pub mod report;
pub mod shooting;
pub mod weight;

pub use error::{Error, Result};
pub use nonlin::{ChangeOfVariables, Nonlinearity};
pub use shooting::{Problem, Settings, SolutionProfile};
pub use weight::{Weight, WeightParams};
