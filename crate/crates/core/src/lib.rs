//! Empirical risk minimization over finite unions of linear classes under the
//! square loss, with exact population oracles, bound constants, localization
//! sets and a Monte Carlo verification engine.

pub mod bounds;
pub mod erm;
pub mod error;
pub mod experiments;
pub mod instances;
pub mod linalg;
pub mod localization;
pub mod model;
pub mod population;
pub mod processes;
pub mod seeds;
pub mod stats;

pub use error::{Error, Result};
