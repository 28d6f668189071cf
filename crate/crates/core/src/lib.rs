//! Hyperparameter-informed predictive exploration (HIPE) for initializing
//! few-shot, large-batch Bayesian optimization with fully Bayesian Gaussian
//! processes, together with the baselines, benchmarks and experiment harness
//! used to evaluate it.

pub mod acquisition;
pub mod batch;
pub mod benchmarks;
pub mod design;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod hyper;
pub mod linalg;
pub mod optimizer;
pub mod quadrature;

pub use batch::BatchCandidate;
pub use error::{Error, Result};
