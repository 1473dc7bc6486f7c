//! Mixed-batch continual-learning laboratory: a from-scratch transformer,
//! synthetic MATH and NLI tasks, an m:n batch mixer, training, checkpoints
//! and reports.

// Validation uses `!(x > 0.0)` style checks on purpose so that NaN fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod mixer;
pub mod model;
pub mod optim;
pub mod report;
pub mod seed;
pub mod suite;
pub mod taskgen;
pub mod tensor;
pub mod trainer;
