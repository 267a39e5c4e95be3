//! Numerical laboratory for small-data blowup of semilinear wave equations
//! with the critical inverse-distance damping `V₀/|x| ∂ₜu`.

pub mod error;
pub mod exponents;
pub mod functionals;
pub mod odecrit;
pub mod quad;
pub mod report;
pub mod solver;
pub mod special;
pub mod sweep;
pub mod testfn;

pub use error::{Error, Result};
