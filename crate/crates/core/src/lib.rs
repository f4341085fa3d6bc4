//! Penalized regression for variable selection under heterogeneous covariate
//! scales: solvers, tuning, screening, simulation scenarios and benchmarking.

pub mod bench;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod scenario;
pub mod screening;
pub mod selection;
pub mod lp;
pub mod methods;
pub mod solvers;

pub use error::{Error, Result};
