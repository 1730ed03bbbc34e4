//! Planning toolkit for deciding, over a fixed sequence of tasks, whether the
//! robot should act, delegate the task to a human, or be taught a new skill.
//!
//! The crate is organized bottom-up:
//!
//! - [`task`]: tasks, costs, skills and the two synthetic task domains.
//! - [`coverage`]: the abstract tap-coverage simulator used to generate
//!   transfer labels, plus the block-insertion surrogate.
//! - [`precond`]: the pairwise precondition classifier.
//! - [`planner`]: instance construction and the exact / approximate planners.
//! - [`baselines`]: comparison policies and the Monte Carlo executor.
//! - [`bench`]: experiment harness used by the `adl` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated checks also reject NaN

pub mod baselines;
pub mod bench;
pub mod coverage;
pub mod error;
pub mod planner;
pub mod precond;
pub mod seed;
pub mod task;

pub use error::{Error, Result};
