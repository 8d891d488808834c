//! Trap-model dynamics on regular trees with heavy-tailed trap depths.
//!
//! The crate simulates the walker exactly on a lazily generated landscape,
//! extracts its per-level clock processes, represents them through nested
//! cascade functionals, and evaluates the limit laws they converge to:
//! generalized arcsine laws, composed stable subordinators, Ruelle cascades
//! and the Neveu branching process.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cascades;
pub mod clocks;
pub mod dynamics;
pub mod environment;
pub mod hierarchy;
pub mod limits;
pub mod numerics;
