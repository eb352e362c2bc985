//! Smooth neural state variables and neural state vector fields.
//!
//! The crate simulates ground-truth dynamical systems, lifts their states
//! into a 64-dimensional observation space, learns a bounded low-dimensional
//! embedding of those observations, fits a vector field on the embedding and
//! analyses the result (equilibria, stability, frequencies, chaos, limit
//! cycles and damped synthesis).

pub mod analysis;
pub mod commands;
pub mod config;
pub mod dimension;
pub mod embed;
pub mod error;
pub mod field;
pub mod lift;
pub mod nn;
pub mod ode;
pub mod persist;
pub mod pipeline;
pub mod rng;
pub mod systems;
pub mod transport;

pub use error::{Error, Result};

/// Version tag written into every persisted artifact.
pub const FORMAT_VERSION: u32 = 1;
