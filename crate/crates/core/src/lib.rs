//! Noise-resistant deep metric learning kernels.
//!
//! The crate scores every mini-batch sample by how strongly its embedding
//! agrees with historic features of its labelled class, drops the least
//! plausible fraction, and trains an embedding head on the rest. Everything
//! here is allocation-only `no_std`; file formats, timing and the experiment
//! CLI live in the `prism-harness` crate.
//!
//! Module map:
//!
//! - [`numkit`]: vectors, matrices, cosine similarity, percentiles, seeded RNG
//! - [`model`]: the trainable embedding head with explicit backprop and SGD
//! - [`memory_bank`]: FIFO feature store with exact per-class centers
//! - [`prism`]: clean-probability scoring, thresholds, batch filtering
//! - [`losses`]: batch / memory contrastive and SoftTriple losses
//! - [`noise`]: symmetric and small-cluster label-noise synthesis
//! - [`dataeval`]: datasets, PK sampling, retrieval and filtering metrics
//! - [`train`]: one filtered training iteration wired end to end
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

pub mod dataeval;
pub mod error;
pub mod losses;
pub mod memory_bank;
pub mod model;
pub mod noise;
pub mod numkit;
pub mod prism;
pub mod train;

pub use error::{Error, Result};
pub use numkit::{FeatureMatrix, FeatureVector, SeededRng};
