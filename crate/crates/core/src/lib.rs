//! Photon time-tag simulation and second-order correlation analysis.
//!
//! The crate generates detector clicks from classical models of multimode
//! laser light, passes them through a simulated four-detector bench,
//! histograms pairwise delays into g²(τ) correlograms and extracts peak,
//! oscillation and anti-phase signatures from them.

// Negated float comparisons are used deliberately so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod correlator;
pub mod error;
pub mod optics;
pub mod rng;
pub mod scenario;
pub mod sources;
pub mod tags;

pub use error::{Error, Result};
pub use tags::{TagStream, TimeTag};
