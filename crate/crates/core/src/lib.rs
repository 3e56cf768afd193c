//! Learn one-step stochastic flow maps of unknown SDEs from trajectory data.
//!
//! The pipeline: simulate (or load) trajectories of an SDE, slice them into
//! one-step `(x0, x1)` pairs, and fit an encoder/decoder pair where the
//! encoder recovers a unit-Gaussian latent `z` from `(x0, x1)` and the
//! decoder reproduces `x1 = x0 + residual(x0, z)`. After training, the
//! decoder alone is a generative one-step map: feeding it fresh `z ~ N(0, I)`
//! rolls out new trajectories whose statistics track the underlying SDE.
//!
//! Modules follow the pipeline: [`sde`] and [`catalog`] generate data,
//! [`dataset`] builds pair stores and nearest-neighbor batches, [`neural`]
//! and [`losses`] define the model and its training objective, [`training`]
//! runs the optimization and the latent-dimension sweep, [`evaluation`]
//! rolls out ensembles and recovers drift/diffusion, and [`io`] holds the
//! file formats.

pub mod catalog;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod io;
pub mod losses;
pub mod neural;
pub mod rng;
pub mod sde;
pub mod training;

pub use error::{Error, Result};
pub use exec::Exec;
