//! Micro-macro acceleration for stiff stochastic differential equations.
//!
//! A run alternates short Euler–Maruyama bursts on a weighted particle
//! ensemble with a coarse forward Euler leap of a few macroscopic moments.
//! The leap is closed by reweighting the last microscopic ensemble so that it
//! reproduces the extrapolated moments while staying as close as possible, in
//! relative entropy, to the ensemble it came from.
//!
//! The crate also ships a deterministic grid oracle on the one-dimensional
//! torus ([`oracle_grid`]) that evolves densities by the Fokker–Planck
//! equation and measures the entropy expansions that govern the local error
//! of the method.

pub mod accel;
pub mod cli;
pub mod ensemble;
mod error;
pub mod extrapolation;
pub mod fit;
pub mod matching;
pub mod micro;
pub mod oracle_grid;
pub mod restriction;
pub mod rng;
pub mod space;

pub use error::{Error, Result};

pub use accel::{AccelConfig, TrajectoryRecord};
pub use ensemble::WeightedEnsemble;
pub use matching::{MatchOutcome, MatchStatus, Multipliers, SolverOptions};
pub use micro::MicroConfig;
pub use oracle_grid::GridDensity;
pub use restriction::{MacroState, RestrictionSet};
pub use space::{ConfigurationSpace, SdeModel};
