//! Bayesian-network model of news consumption: media environments emit news
//! items, agents judge their truth under motivated reasoning, and the
//! posterior over agent politics is sampled by trace-based single-site
//! Metropolis-Hastings and checked against a quadrature posterior.

pub mod cli;
pub mod error;
pub mod inference;
pub mod model;
pub mod oracle;
pub mod report;
pub mod trace;

pub use error::{Error, Result};
