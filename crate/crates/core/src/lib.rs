//! Numerical kernels for data-driven multifidelity topology design.
//!
//! The crate is organized around the stages of the design loop:
//!
//! - [`fem`]: plane-stress finite element analysis on structured quad grids
//! - [`lf`]: density-based topology optimization (the low-fidelity stage)
//! - [`hf`]: high-fidelity evaluation of candidate designs
//! - [`vae`]: multi-channel variational autoencoder used as a crossover operator
//! - [`moea`]: non-dominated sorting, selection, hypervolume, and sampling
//! - [`mapping`]: design-domain mapping and field smoothing
//!
//! Everything here is deterministic given explicit RNG seeds and runs without
//! the standard library (`alloc` is required). IO, file formats, and the
//! pipeline orchestration live in the companion CLI crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

/// Crate version, re-exported so downstream tools can stamp run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

mod float;

pub mod fem;
pub mod hf;
pub mod lf;
pub mod mapping;
pub mod moea;
pub mod rng;
pub mod vae;
