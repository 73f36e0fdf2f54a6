//! Numerical laboratory for the nonlinear Schrödinger equation with a cubic
//! nonlinearity weighted by a random atomic measure.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod haar;
pub mod levy;
pub mod linearized;
pub mod nls;
pub mod seeding;
pub mod stats;
pub mod weighted;

pub use error::{Error, Result};
