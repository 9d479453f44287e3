//! Steepest-descent POVM optimization for multiparameter quantum estimation.

pub mod analytic;
pub mod bounds;
pub mod error;
pub mod fisher;
pub mod linalg;
pub mod measurement;
pub mod model;
pub mod optimizer;
pub mod sweep;
pub mod verify;

pub use error::{Error, Result};
