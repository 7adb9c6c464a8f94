//! Camera-to-BEV lifting: frustum geometry, depth-distribution lifting,
//! BEV splatting, an IPM baseline, object placement, losses and metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bev_loss;
pub mod classes;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod ipm;
pub mod lift;
pub mod object_bev;
pub mod pipeline;
pub mod scene;
pub mod splat;

pub use error::{Error, Result};
