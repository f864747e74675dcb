//! Susceptibility estimators for singular statistical models.

pub mod asymptotics;
pub mod backend;
pub mod config;
pub mod error;
pub mod experiments;
pub mod hermite;
pub mod linalg;
pub mod loss;
pub mod model_zoo;
pub mod observables;
pub mod patterning;
pub mod poly;
pub mod posterior;
pub mod quad;
pub mod sgld;
pub mod stats;
pub mod susceptibility;

pub use error::{Error, Result};
