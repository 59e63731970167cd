//! Multiscale neutron transport on structured Cartesian grids.
//!
//! The solver family shares one discretization of the relaxation-form
//! transport equation and differs in how the interface flux is closed:
//!
//! * [`ugks`] — deterministic discrete-ordinates closure (1-D slab),
//! * [`solver`] with [`config::SolverMode::Ugkp`] — full particle closure,
//! * [`solver`] with [`config::SolverMode::Ugkwp`] — adaptive wave/particle
//!   split that degenerates to the other two in the diffusive and
//!   free-streaming limits.
//!
//! Supporting pieces: [`geometry`] (meshes, material paint, boundary tags),
//! [`xs`] (multigroup cross-section tables), [`kinetics`] (interface flux
//! coefficients and limited reconstruction), [`particle`] (pool, streaming,
//! tallies, conservation ledger), [`eigen`] (power iteration, rod worth),
//! [`oracles`] (independent reference solutions used by the test suite),
//! and [`bench`] (the built-in benchmark registry behind the `ugkwp` CLI).

pub mod bench;
pub mod config;
pub mod eigen;
pub mod error;
pub mod geometry;
pub mod kinetics;
pub mod oracles;
pub mod output;
pub mod particle;
pub mod quad;
pub mod rng;
pub mod solver;
pub mod ugks;
pub mod xs;

pub use error::{Error, Result};
