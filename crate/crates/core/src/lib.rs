//! Numerical laboratory for a Kac-type particle system coupled to a thermal
//! reservoir: exact jump-chain algebra, Gaussian-mixture evolution, direct
//! simulation, entropy estimation, and spherical inequality checks.

pub mod dsmc;
pub mod error;
pub mod estimators;
pub mod gaussian;
pub mod model;
pub mod series;
pub mod spherical;
pub mod sum_rule;

pub use error::{KacError, Result};
