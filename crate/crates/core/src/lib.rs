//! Bayesian inference engine for unit-level small area estimation when
//! covariates are observed with error: categorical covariates pass through an
//! unknown row-stochastic misclassification matrix and continuous covariates
//! carry additive Gaussian noise. Latent true covariates are treated by data
//! augmentation and sampled inside a Gibbs cycle together with the regression
//! coefficients, variance components, area effects and the misclassification
//! matrix itself.
//!
//! Modules:
//! - [`rng`]: seeded, splittable random streams and the variate primitives.
//! - [`model`]: datasets, hyperparameters, parameter state, likelihood.
//! - [`gibbs`]: the full-conditional updates and the chain driver.
//! - [`predict`]: small-area mean prediction, posterior summaries, category
//!   recovery.
//! - [`sim`]: the simulation laboratory (population generation, category
//!   perturbation, estimator comparison tables).
//! - [`validate`]: sampler-correctness suites (conjugacy oracles and a
//!   joint-distribution test).

pub use nalgebra;

pub mod error;
pub mod gibbs;
pub mod model;
pub mod predict;
pub mod rng;
pub mod sim;
pub mod validate;

pub use error::{Error, Result};
pub use gibbs::{run_chain, ChainConfig, ChainOutput};
pub use model::{Dataset, HyperParams, ModelMode, ParamState, RawData, TransitionMatrix};
pub use rng::RngStream;
