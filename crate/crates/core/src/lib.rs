#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod ctsim;
pub mod diffusion;
pub mod dissim;
pub mod evaluator;
pub mod fsutil;
pub mod image;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod seed;
