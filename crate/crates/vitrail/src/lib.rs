//! Spectral renderer front end: scene files, image formats, parallel
//! schedulers, the domain-decomposed runtime and the benchmark harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ddm_runtime;
pub mod harness;
pub mod io;
pub mod scene_file;
pub mod scenes;
pub mod scheduler;

pub use vitrail_core;
