//! Spectral computations for periodic Schrödinger operators `-Laplace + V`
//! on `R^d`, `d >= 2`, through their Floquet-Bloch fibres.
//!
//! - [`lattice`]: period and dual lattices, Brillouin-zone geometry.
//! - [`potential`]: trigonometric-polynomial potentials and their norms.
//! - [`fibre`]: plane-wave matrices of `H(k)`, eigenvalue counting by
//!   inertia, eigenpairs and band velocities.
//! - [`ids`]: integrated density of states and spectral windows by
//!   Brillouin-zone quadrature.
//! - [`geometry`]: the resonance-free shell sets and the fraction of
//!   regular directions.
//! - [`decay`]: eigenvector decay and band-velocity checks at high energy.
//!
//! Grid sweeps and Monte Carlo loops run through [`exec`], which uses rayon
//! when the `parallel` feature is on and falls back to plain iteration
//! otherwise.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decay;
pub mod error;
pub mod exec;
pub mod fibre;
pub mod geometry;
pub mod ids;
pub mod lattice;
pub mod potential;
pub mod report;

pub use error::{Error, Result};
pub use exec::Parallelism;
pub use lattice::{DualLattice, Lattice};
pub use potential::Potential;
