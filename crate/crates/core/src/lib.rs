//! Threshold dynamics: forward simulation of convolution-threshold front
//! evolution, and recovery of the kernel and threshold behind an observed
//! video with two gradient-trained models.

pub mod autodiff;
pub mod cli;
pub mod datagen;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod ingest;
pub mod kernels;
pub mod mbonet;
pub mod metanet;
pub mod metrics;
pub mod optim;
pub mod store;

pub use error::{Error, Result};
