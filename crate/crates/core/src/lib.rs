//! Car-following calibration and simulation engine.
//!
//! Fits the Intelligent Driver Model (IDM) with AR(p)-correlated process errors in a
//! hierarchical Bayesian framework, then drives probabilistic single-follower, platoon,
//! and ring-road simulations with quantitative scoring (RMSE, CRPS, autocovariance).
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`trajectory`]: leader-follower trajectory ingestion, validation, and resampling
//! - [`idm`]: the deterministic IDM acceleration law and ballistic state update
//! - [`ar`]: AR(p) error processes (sampling, stationarity, Yule-Walker autocovariance)
//! - [`likelihood`]: acceleration / speed / position / joint log-likelihoods
//! - [`prior`]: the hierarchical prior, unconstrained reparameterization, log-posterior
//! - [`autodiff`]: a small reverse-mode tape used to differentiate the posterior
//! - [`sampler`]: Hamiltonian Monte Carlo (plus an optional no-U-turn variant) and
//!   convergence diagnostics
//! - [`sim`]: stochastic follower, platoon, and ring-road rollouts
//! - [`eval`]: RMSE, CRPS, residual extraction, and horizon scoring
//! - [`synth`]: generative synthetic data with known ground truth

pub mod ar;
pub mod autodiff;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod idm;
pub mod likelihood;
pub mod prior;
pub mod sampler;
pub mod sim;
pub mod stats;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
