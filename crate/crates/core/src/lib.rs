//! Full-spectral ray tracing core.
//!
//! Everything in this crate is pure computation over immutable scene data:
//! the 81-band spectral value type, dielectric optics, triangle geometry
//! with a bounding volume hierarchy, a Whitted-style local renderer, a
//! two-map photon mapper and the pieces of the ray-tracing domain
//! decomposition (partitioning, routing, per-sub-domain tracing, boundary
//! ray messages and result gathering).
//!
//! Threads, clocks and file formats live in the `vitrail` crate.

#![no_std]
#![deny(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ddm;
pub mod error;
pub mod geometry;
pub mod math;
pub mod optics;
pub mod render_global;
pub mod render_local;
pub mod rng;
pub mod scene;
pub mod spectral;

pub use error::{Error, Result};
pub use math::Vec3;
pub use spectral::{Bands, SpectralDistribution, SpectralGroup, BANDS};
