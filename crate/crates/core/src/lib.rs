//! Estimation of total effects in linear structural causal models with the
//! PCM Selector, a two-stage penalized regression that selects covariates and
//! intermediate variables, together with back-door and front-door-like
//! plug-in estimators, penalized regression baselines, graph criterion
//! checks, an SCM simulator and a Monte Carlo harness.

pub mod data;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod graph;
pub mod linalg;
pub mod methods;
pub mod scm;
pub mod tuning;

pub use data::{Dataset, RoleNames, RolePartition};
pub use error::{Error, Result};
pub use graph::Dag;
pub use scm::LinearScm;
