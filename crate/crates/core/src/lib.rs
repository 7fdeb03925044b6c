//! Simulation and limit theory for power variations of paths controlled by a
//! fractional Brownian motion.
//!
//! * [`fbm`]: exact fBm sampling (circulant embedding, Cholesky).
//! * [`hermite`]: Gaussian moments, Hermite expansions and limit constants.
//! * [`rough`]: controlled paths, rough integrals and RDE solutions.
//! * [`stats`]: power variations, weighted sums and limit functionals.
//! * [`harness`]: reproducible Monte Carlo experiments.

pub mod error;
pub mod fbm;
pub mod harness;
pub mod hermite;
pub mod io;
pub mod regression;
pub mod rng;
pub mod rough;
pub mod stats;

pub use error::{Error, Result};
