//! Simulation, physics-informed dual-network training, and equation discovery
//! for a two-compartment pharmacokinetic system.
//!
//! * [`pk`]: the ground-truth ODE, its RK4 integrator, noisy datasets.
//! * [`autodiff`]: dense networks, a reverse-mode tape, Adam.
//! * [`trainer`]: the state/right-hand-side network pair and its losses.
//! * [`sr`]: sparse regression and genetic-programming symbolic regression.
//! * [`evaluation`]: extrapolation error, derivative agreement, exports.

pub mod autodiff;
pub mod error;
pub mod evaluation;
pub mod pk;
pub mod spline;
pub mod sr;
pub mod trainer;

pub use error::{Error, Result};
