//! Bayesian edit-imputation for household categorical microdata.
//!
//! The model is a truncated nested Dirichlet-process mixture of products of
//! multinomials over households that satisfy a set of structural-zero edit
//! rules, combined with a measurement-error model for reported values. A
//! Gibbs sampler produces multiply imputed, rule-consistent datasets.

pub mod analyze;
pub mod config;
pub mod contaminate;
pub mod data;
pub mod edits;
pub mod error;
pub mod io;
pub mod merror;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod schema;

pub use error::{Error, Result};
