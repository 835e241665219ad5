//! Likelihood-based estimation for stationary Gaussian random fields observed
//! on large, possibly incomplete, regular 2-D lattices.
//!
//! The field is embedded in a torus so that its correlation matrix is block
//! circulant with circulant blocks and every product with it costs a pair of
//! FFTs. Missing sites are imputed by conditional simulation, with the
//! required linear solves done by preconditioned conjugate gradients. On top
//! of that sit a Metropolis-within-Gibbs sampler and a Monte Carlo EM
//! maximizer, plus composite-likelihood, Whittle and dense baselines.

pub mod baselines;
pub mod bench;
pub mod bccb;
pub mod covariance;
pub mod em;
pub mod error;
pub mod lattice;
pub mod likelihood;
pub mod mcmc;
pub mod problem;
pub mod registry;
pub mod rng;
pub mod simulate;
pub mod solver;

pub use error::{Error, Result};
