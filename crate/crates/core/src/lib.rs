//! Bayesian graphical lasso for correlated count data.
//!
//! Counts `y_ti` are Poisson with log-rate `mu_i + z_ti`; the latent rows
//! `z_t` are Gaussian with a sparse precision matrix `Omega` under a
//! graphical-lasso prior. [`fit::fit`] draws from the joint posterior with a
//! Metropolis-Hastings-within-Gibbs sampler.

pub mod bgl;
pub mod cli;
pub mod dist;
pub mod error;
pub mod fit;
pub mod ingest;
pub mod io;
pub mod linalg;
pub mod model;
pub mod persist;
pub mod posterior;
pub mod risk;
pub mod synth;

pub use error::{Error, Result};
