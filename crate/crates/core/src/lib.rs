//! Neural operator surrogates for parametric PDEs and their use in Bayesian
//! inversion.
//!
//! The crate bundles a P1 finite element core, Gaussian random field priors,
//! the Poisson and plane-strain elasticity forward models, SVD-based dimension
//! reduction, a small reverse-mode autodiff engine with DeepONet, PCANet and
//! FNO surrogates, pCN MCMC, and the on-disk dataset format.

pub mod binio;
pub mod data;
pub mod dimred;
pub mod error;
pub mod fem;
pub mod forward;
pub mod grf;
pub mod matrix;
pub mod mcmc;
pub mod nn;
pub mod operators;
pub mod rng;

pub use error::{Error, Result};
