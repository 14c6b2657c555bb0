//! Reduction of fast-slow Fokker-Planck equations on a strip.
//!
//! Pipeline: stationary density and projections, eigenbasis of the fast
//! operator, coupling tensors, the truncated coefficient system, sine
//! splitting of the slow coefficient with a spectral gap check, and the
//! Lyapunov-Perron slow manifold. Brute-force full-PDE and Monte Carlo
//! solvers serve as oracles.

pub mod error;
pub mod expr;
pub mod model;
pub mod numerics;
pub mod eigenbasis;
pub mod stationary;
pub mod coupling;
pub mod coefsys;
pub mod splitting;
pub mod slowmanifold;
pub mod reconstruct;
pub mod reference;
pub mod config;
pub mod harness;

pub use error::{Error, Result};
