// `!(a < b)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod environment;
pub mod grid_model;
pub mod harness;
mod linalg;
pub mod neural;
pub mod powerflow;
pub mod rewards;
