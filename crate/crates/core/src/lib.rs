//! Economic model predictive control for an islanded microgrid whose battery
//! has a quadratic conversion loss.
//!
//! Three controllers share one plant, one program representation and one
//! solver:
//!
//! * a model-based reference MPC that knows the battery dynamics,
//! * a linear data-driven MPC that represents the battery through Hankel
//!   matrices of recorded input/output data, with a penalised output slack,
//! * a Hammerstein data-driven MPC that lifts the battery input to `(u, u²)`
//!   and recovers an exact trajectory representation.
//!
//! The [`solver`] module is a small deterministic mixed-integer solver for the
//! programs produced by [`problems`]; [`harness`] runs receding-horizon
//! simulations and evaluates prediction quality.

pub mod error;
pub mod hankel;
pub mod harness;
pub mod plant;
pub mod problems;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
