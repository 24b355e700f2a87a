//! Numerical pipeline for positive solutions of singular elliptic systems
//! with convection terms: eigenfunction subsolutions, constant and
//! torsion-function supersolutions, frozen-branch truncation with penalty,
//! damped fixed-point and Newton solves of the regularized systems, and an
//! eps -> 0 continuation ladder with full invariant verification.

pub mod bounds;
pub mod continuation;
pub mod error;
pub mod grid;
pub mod report;
pub mod scenario;
pub mod solver;
pub mod spectral;
pub mod truncation;

pub use error::{Error, Result};
