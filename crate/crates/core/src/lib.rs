//! Particle PHD filter and forward-backward smoother for joint detection,
//! tracking and classification of multiple targets from amplitude-thresholded
//! multi-sensor radar data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod error;
pub mod estimation;
pub mod forward;
pub mod harness;
pub mod metrics;
pub mod quadrature;
pub mod scenario;
pub mod sensing;
pub mod smoother;
pub mod state_space;

pub use error::{Error, Result};
