//! Spatial modulation for visible light links with an arbitrary number of LEDs.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] — line-of-sight Lambertian channel gains for a room layout.
//! * [`cabm`] — channel-adaptive bit mapping: a prefix-free space codebook,
//!   mixed-order PAM and the exhaustive order search.
//! * [`link`] — the optical channel with input-dependent Gaussian noise.
//! * [`capacity`] — mutual information (numerical), its closed-form lower
//!   bound, asymptotic limits and the precoded bound.
//! * [`precode`] — max-min distance precoding with a soft-min continuation.
//! * [`simulate`] — Monte Carlo BER with maximum-likelihood detection.
//! * [`experiment`] — JSON-configured sweeps that emit CSV.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cabm;
pub mod capacity;
mod error;
pub mod experiment;
pub mod geometry;
pub mod link;
pub mod precode;
pub mod simulate;

pub use error::{Error, Result};
