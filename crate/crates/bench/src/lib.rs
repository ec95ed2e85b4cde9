//! Benchmark harness: experiment grids over (algorithm, m, M, theta), MSE
//! against the Kalman oracle, lower-envelope post-processing, CSV emission.

pub mod envelope;
pub mod grid;
pub mod io;
