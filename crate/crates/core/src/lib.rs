//! Spectral lattice simulation of elliptic stochastic quantization and its
//! dimensional reduction to a Gibbs measure on the internal directions.

pub mod besov;
pub mod error;
pub mod gibbs;
pub mod lattice;
pub mod model;
pub mod noise;
pub mod pipeline;
pub mod wick;
pub mod reduction;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
