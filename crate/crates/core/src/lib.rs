//! Hellinger–Kantorovich geometry on grid measures.
//!
//! * [`measures`]: grid domains and nonnegative densities.
//! * [`entropy`]: entropy densities, functionals, convexity certificates.
//! * [`hk`]: HK and SHK distances through the entropy-transport program.
//! * [`geometry`]: angle, inner-product and concavity probes on model spaces.
//! * [`mm`]: minimizing-movement schemes and density-bound checks.
//! * [`evi`]: integrated EVI residuals, error budgets, convergence studies.
//! * [`pde`]: finite-difference and ODE oracles for the limit equations.
//! * [`mdelta`]: density-class membership tests.
//! * [`runner`]: configuration-driven experiments behind the `hkflow` binary.

pub mod entropy;
pub mod error;
pub mod evi;
pub mod geometry;
pub mod hk;
pub mod mdelta;
pub mod measures;
pub mod mm;
pub mod pde;
pub mod runner;

pub use error::{Error, Result};
