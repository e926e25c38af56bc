//! Tabular synthetic-data engine built around a variational autoencoder whose
//! multi-level categorical features are represented by embedding tables that
//! are shared between the encoder input and the decoder reconstruction target.
//!
//! The crate is organised bottom-up:
//!
//! * [`schema`] infers mixed-type schemas from CSV and encodes/decodes rows.
//! * [`nn`] is a small dense-network core with reverse-mode gradients and Adam.
//! * [`model`] holds the network, its loss, the training loop and the
//!   conditional (masked) variant.
//! * [`synthesis`] samples the prior and maps decoder output back to raw rows.
//! * [`fidelity`] scores synthetic data against held-out rows.
//! * [`simgen`] produces the simulated benchmark table.
//! * [`cli`] wires the stages together for the `cardicat` binary.

pub mod cli;
pub mod error;
pub mod fidelity;
pub mod model;
pub mod nn;
pub mod schema;
pub mod simgen;
pub mod synthesis;

pub use error::{Error, Result};
