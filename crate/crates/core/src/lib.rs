//! Particle filters whose resampling interactions are constrained to radix-2
//! butterfly (hypercube) patterns.
//!
//! The crate provides:
//!
//! - [`model`]: the hidden Markov model abstraction and the linear-Gaussian
//!   random-walk benchmark model,
//! - [`oracle`]: an exact Kalman filter for that model, used as ground truth,
//! - [`butterfly`]: the per-stage PE pairing schedule and (test-tier) explicit
//!   interaction matrices,
//! - [`resample`]: the resampling primitives (multinomial, augmented,
//!   within-island, island-augmented with optional swap avoidance) and ESS,
//! - [`filters`]: complete filter algorithms behind a common trait, selected
//!   by name,
//! - [`engine`]: a simulated multi-PE execution engine (serial or threaded)
//!   with full communication accounting.

pub mod butterfly;
pub mod engine;
pub mod error;
pub mod filters;
pub mod model;
pub mod oracle;
pub mod resample;

pub use error::{Error, Result};
