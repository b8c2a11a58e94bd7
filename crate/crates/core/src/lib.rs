//! One-dimensional finite-volume simulator for a two-phase cross-diffusion
//! mixture coupled across a moving interface.
//!
//! The solid phase follows a size-exclusion cross-diffusion law, the gaseous
//! phase a Stefan-Maxwell law, and the two exchange matter through mass-action
//! (Butler-Volmer) interface fluxes that drive the interface position. The
//! discretization is a two-point flux approximation on a cut-cell moving mesh
//! with implicit (Newton) time stepping. The scheme preserves the structural
//! properties of the model: per-species mass, nonnegativity, the volume-filling
//! constraint, and monotone decay of the free energy.
//!
//! Modules:
//! - [`model`]: parameters, thermodynamics, dissipation potentials, matrices
//! - [`fluxes`]: logarithmic mean, truncation map, bulk and interface fluxes
//! - [`mesh`]: cut-cell moving mesh, initial-data discretization, remapping
//! - [`stationary`]: classification and computation of stationary states
//! - [`ode`]: space-homogeneous reduction of the dynamics
//! - [`solver`]: implicit time stepper (Newton on the coupled nonlinear system)
//! - [`diagnostics`]: free energy, dissipation bookkeeping, error norms, CSV
//! - [`scenario`]: configuration, builtin presets, run drivers

pub mod diagnostics;
mod error;
pub mod field;
pub mod fluxes;
pub mod mesh;
pub mod model;
pub mod ode;
pub mod scenario;
pub mod solver;
pub mod stationary;

pub use error::{Error, Result};
