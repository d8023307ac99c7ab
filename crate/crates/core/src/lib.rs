//! Simulation and verification tools for the supercritical branching Ornstein-Uhlenbeck system.
//!
//! Particles move as independent OU processes in `R^d` and, after exponential lifetimes, either
//! split in two or die. The crate provides an exact event-driven simulator, closed-form and
//! semi-analytic oracles for the population and its spatial functionals, and a statistical
//! harness comparing the two.

pub mod engine;
pub mod error;
pub mod harness;
pub mod hermite;
pub mod model;
pub mod oracles;
pub mod ou_kernel;
pub mod poly;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use error::{LabError, Result};
pub use hermite::{MultiIndex, SpectralFunction};
pub use model::{ModelParams, Position, Regime};
