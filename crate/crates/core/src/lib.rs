//! Photon-number statistics of a pulsed single-dipole photon source.
//!
//! The emitter is a three-level system (ground, excited, metastable) driven
//! by rectangular pump pulses, with coherences damped fast enough that rate
//! equations apply. The crate computes per-pulse photon-count distributions
//! exactly ([`propagator`]), in closed form ([`analytics`]) and by
//! stochastic simulation ([`montecarlo`]), and turns them into
//! eavesdropping figures ([`attacks`]). [`cli`] drives batch runs.

pub mod analytics;
pub mod attacks;
pub mod cli;
pub mod error;
pub mod montecarlo;
pub mod propagator;
pub mod rates;

pub use error::{Error, Result};
