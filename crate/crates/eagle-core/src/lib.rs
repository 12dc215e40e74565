//! Structured filter pruning for small CNNs, end to end: train a baseline,
//! sample layer-wise pruning strategies under a FLOPs constraint, score each
//! pruned sub-net cheaply after recalibrating batch-norm statistics, fine-tune
//! the most promising ones, and measure how well the cheap scores predict the
//! fine-tuned accuracy.

pub mod batchnorm;
pub mod correlation;
pub mod data;
pub mod error;
pub mod netgraph;
pub mod pruner;
pub mod scalar;
pub mod search;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
