pub mod baselines;
pub mod cli;
pub mod config;
pub mod constrained;
pub mod constraints;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod expert;
pub mod geometry;
pub mod policy;
pub mod report;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
