//! Decentralised task allocation with reinforcement learning, neighbourhood
//! adaptation and knowledge-retention control.

// `!(x > 0.0)` style checks are kept so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod config;
pub mod impact;
pub mod learning;
pub mod model;
pub mod quality;
pub mod report;
pub mod sim;
