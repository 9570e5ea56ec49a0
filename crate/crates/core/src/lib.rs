//! Spiking neural network portfolio optimization.
//!
//! The pipeline turns daily closing prices into log returns, reduces the
//! universe with correlation-distance Ward clustering, encodes returns into
//! input currents for a population of leaky integrate-and-fire neurons, trains
//! the synaptic weights with surrogate gradients plus STDP, and decodes spike
//! counts into long-only, cardinality-constrained portfolio weights. A small
//! feedforward network serves as the comparison baseline, and the harness
//! backtests everything out of sample.

// `!(x > 0.0)` is deliberate so NaN fails validation; index loops follow the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ann;
pub mod clustering;
pub mod decoder;
pub mod encoding;
pub mod error;
pub mod harness;
pub mod market_data;
pub mod portfolio;
pub mod rng;
pub mod snn;

pub use error::{Error, Result};
