//! Legible and proactive trajectory planning for social navigation.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: dynamically-extended unicycle, exact discretization and Jacobians;
//! - [`convex`]: the convex subproblem representation and its interior-point solver;
//! - [`planner`]: idealized and follower trajectory optimization by SCP, the
//!   inconvenience budget, and iterated best response;
//! - [`baselines`]: comparison controllers behind one policy interface;
//! - [`simulation`]: scenarios, simulated humans and the MPC episode loop;
//! - [`metrics`]: safety/efficiency metrics and batch aggregation.

// `!(x > 0.0)` is used on purpose so NaN fails validation; the numeric
// kernels index several parallel arrays per loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::large_enum_variant)]

pub mod baselines;
pub mod convex;
pub mod dynamics;
pub mod metrics;
pub mod planner;
pub mod simulation;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("program is not convex: {0}")]
    NotConvex(String),
    #[error("i/o or serialization failure: {0}")]
    Io(String),
    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, Error>;
