//! Asynchronous distributed accelerated primal-dual (AD-APD) solver for
//! multi-agent consensus optimization with local nonlinear convex constraints.
//!
//! The crate is organized around the pieces of one experiment:
//!
//! - [`graph`]: communication graphs, mixing and consensus matrices.
//! - [`problem`]: per-agent objectives, constraints and box regularizers.
//! - [`solver`]: step sizes, the agent updates, scheduling and ergodic averaging.
//! - [`baseline`]: the synchronous comparison method and centralized reference solver.
//! - [`metrics`]: error metrics, the Lagrangian and the explicit gap bound.
//! - [`experiment`]: configuration, commands and plotting used by the `adapd` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod problem;
pub mod run;
pub mod solver;

pub use error::{Error, Result};
