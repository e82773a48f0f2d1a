//! Wavelet-domain speckle reduction for SAR-like imagery.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is pure
//! computation over [`Raster`] values: speckle simulation, the separable 2-D
//! DWT, classical and Bayesian coefficient shrinkage, spatial despeckling
//! filters, the trainable neural shrinkage network and the assessment
//! metrics. File formats, configuration and the command line live in the
//! `nshrink` companion crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
mod raster;

pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod shrink;
pub mod spatial;
pub mod speckle;
pub mod stats;
pub mod synthetic;
pub mod wavelet;

pub use error::{Error, Result};
pub use raster::Raster;
