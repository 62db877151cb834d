//! Single-clip motion synthesis: a coarse-to-fine stack of skeleton-aware
//! temporal GANs trained on one animation, with tools for conditional and
//! streaming generation and nearest-neighbour evaluation metrics.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod tensor;
pub mod graph;
pub mod motion;
pub mod networks;
pub mod oracle;
pub mod synthetic;
pub mod model;
pub mod training;
pub mod synthesis;
pub mod metrics;
