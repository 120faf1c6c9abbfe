//! Bit-string Monte Carlo engine for U(1)-symmetric hybrid automaton circuits.
//!
//! A realization is a list of gate events. Every circuit in the model maps
//! computational-basis strings to basis strings up to a sign, so purity,
//! correlators and fidelities reduce to classical sums over sampled strings.

pub mod check;
pub mod circuit;
pub mod dynamics;
pub mod error;
pub mod exact;
pub mod kernel;
pub mod lattice;
pub mod observables;
pub mod rng;
pub mod runner;
pub mod scaling;

pub use error::{Error, Result};
