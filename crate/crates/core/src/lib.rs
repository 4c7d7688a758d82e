//! Path-dependent forward-backward doubly stochastic systems.
//!
//! The crate simulates a forward SDE whose coefficients see the whole path,
//! solves the associated backward doubly stochastic equation for
//! `u(γ_t) = Y^{γ_t}(t)` with a regression engine and a nested quadrature
//! engine, and checks the relations tying `u` to its path-dependent backward
//! SPDE.

pub mod error;
pub mod functional;
pub mod models;
pub mod path_space;
pub mod rng;
pub mod simulation;
pub mod solver;
pub mod stats;
pub mod verification;

pub use error::{Error, Result};
pub use path_space::{Path, PathDistance, TimeGrid};
