//! Numerical laboratory for one-dimensional disordered chains with sparse
//! anharmonicity: classical oscillator dynamics, free and interacting
//! fermions, localized one-body operators, rare-region statistics, and the
//! energy-transport estimators built on top of them.

pub mod anderson;
pub mod chain;
pub mod cli;
pub mod correlation;
pub mod disorder;
pub mod error;
pub mod fermion;
pub mod griffiths;
pub mod rng;
pub mod splitting;
pub mod stats;

pub use error::{Error, Result};
