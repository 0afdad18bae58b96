//! Finite-key secret key rates for the three-state loss-tolerant QKD
//! protocol with imperfect sources: encoding flaws in the prepared states
//! and fluctuating pulse intensities.
//!
//! The pipeline runs from the channel model through decoy-state
//! estimation and the phase-error bound to the key length, plus an
//! optimiser over the free protocol parameters.

pub mod channel;
pub mod concentration;
pub mod config;
pub mod decoy;
pub mod error;
pub mod key_length;
pub mod optimize;
pub mod phase_error;
pub mod protocol;
pub mod quadrature;
pub mod qubit_model;
pub mod sweep;
pub mod validation;

pub use error::{Error, Result};
