//! Offline learning of reference-anchored equilibria in contextual games.
//!
//! Two pipelines share one regression front end. The Nash pipeline fits
//! rewards from logged data and solves the KL-regularized Nash equilibrium of
//! the estimated game. The mirror-descent pipeline runs anchored self-play
//! against the same estimates and returns the uniform mixture of its iterates
//! as a coarse correlated equilibrium.

// Float checks are written as negated comparisons so NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod gamd;
pub mod game;
pub mod gane;
pub mod io;
pub mod offline;
pub mod regression;
pub mod synth;
pub mod values;

pub use error::{Error, Result};
