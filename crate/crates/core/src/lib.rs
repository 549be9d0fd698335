//! Finite-key secret-key-length bounds for efficient two-decoy BB84 with
//! imperfect sources: Gaussian-fluctuating pulse intensities and
//! basis-dependent polarization encoding.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Distributions are built once per scenario; boxing buys nothing.
#![allow(clippy::large_enum_variant)]

pub mod config;
pub mod decoy_bounds;
pub mod error;
pub mod finite_key;
pub mod ingest;
pub mod photon_stats;
pub mod polarization;
pub mod quad;
pub mod special;
pub mod synthetic;

pub use error::{Error, Result};
