//! Simulation and analysis of particles that jump forward at a rate set by
//! their distance to the center of mass.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod error;
pub mod extremes;
pub mod format;
pub mod harness;
pub mod mean_field;
pub mod measures;
pub mod model;
pub mod numeric;
pub mod sim;
pub mod special;
pub mod two_particle;

pub use error::{Error, Result};
pub use model::{LengthSpec, RateSpec, SystemState};
