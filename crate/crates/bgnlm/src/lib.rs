//! Bayesian generalized nonlinear models: GMJMCMC search over expression-tree
//! features with exact and subsampled marginal likelihood estimation.

pub mod config;
pub mod data;
pub mod error;
pub mod evaluator;
pub mod feature;
pub mod glm;
pub mod gmjmcmc;
pub mod inference;
pub mod report;
pub mod sampler;
pub mod sirls;

pub use error::{Error, Result};
