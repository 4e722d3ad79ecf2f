//! Video anomaly detection with a 3-D convolutional autoencoder trained to
//! reconstruct normal clips and to fail on frame-skipped clips that imitate
//! abnormally fast motion.
//!
//! Data flow: [`dataset`] and [`synthesizer`] produce clips, [`training`]
//! fits an [`model::Autoencoder`], [`scoring`] turns reconstructions into
//! per-frame anomaly scores and [`evaluation`] measures frame-level ROC AUC.
//! [`synthbench`] generates a synthetic benchmark and [`cli`] wires it all
//! into the `steal` binary.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod scoring;
pub mod synthbench;
pub mod synthesizer;
pub mod training;

pub use error::{Error, Result};
