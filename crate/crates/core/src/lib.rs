//! Padé activation units: learnable rational activations with analytic
//! gradients, coefficient initialization, a small trainable network, and a
//! magnitude-pruning harness.

pub mod approx;
pub mod curve;
pub mod document;
pub mod error;
pub mod gradcheck;
pub mod network;
pub mod prune;
pub mod rational;
pub mod train;

pub use error::{Error, Result};
