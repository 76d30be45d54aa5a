//! Random batch Monte Carlo (RBMC) sampling of interacting-particle Gibbs
//! measures, with a deterministic mean-field fixed-point oracle for
//! validation.
//!
//! The crate targets stationary measures of nonlinear (mean-field)
//! Fokker-Planck equations: an `N`-body Gibbs distribution is sampled with a
//! splitting Monte Carlo scheme — cheap randomized-batch Langevin proposals
//! built from the smooth long-range part of the interaction, corrected by a
//! Metropolis step that only evaluates the short-range singular part through
//! a cell list. The same stationary problem is solved independently on a grid
//! by damped fixed-point iteration on the self-consistency relation
//! `rho ∝ exp(-beta (U + W * rho))`, which provides the reference curves and
//! error metrics.
//!
//! Modules:
//!
//! * [`potentials`] — pair kernels with smooth/singular splits, external
//!   potentials, reflecting domains;
//! * [`gibbs`] — particle configurations, species systems, and exact N-body
//!   energies;
//! * [`sampler`] — the random batch Markov chain, cell lists, and sample
//!   recording;
//! * [`oracle`] — grid densities, convolutions, and single/two-species damped
//!   fixed-point solvers;
//! * [`diagnostics`] — weak errors, total-variation and negative-Sobolev
//!   distances, rate fits;
//! * [`nn`] — mean-field training of a two-layer network as Gibbs sampling in
//!   parameter space;
//! * [`config`] / [`experiments`] — run configuration, presets, and the
//!   experiment drivers behind the `rbmc` binary.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod gibbs;
pub mod nn;
pub mod oracle;
pub mod potentials;
pub mod sampler;

pub use error::{Error, Result};
