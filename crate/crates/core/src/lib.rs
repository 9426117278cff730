//! Coupled human-robot floating-base dynamics, partner-aware torque control,
//! and articulation identification from contact wrenches.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod coupled;
pub mod linalg;
pub mod multibody;
pub mod simulate;
pub mod spatial;
pub mod topology;
