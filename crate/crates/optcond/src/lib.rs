//! Numerical verification of optimality conditions for ODE optimal control
//! problems whose control domain is a plain metric space.
//!
//! The library takes a problem (dynamics, running cost, state derivatives,
//! regularity data), a finite sampled control domain with its metric, and a
//! candidate piecewise-constant control, and checks:
//!
//! * the first-order condition: the candidate maximizes the Hamiltonian
//!   along its own trajectory, up to a residual tolerance;
//! * a second-order necessary condition: the quadratic functional `Q`
//!   attached to any comparison control is nonpositive, together with its
//!   pointwise-in-time counterpart;
//! * an empirical sufficient-condition margin: a coercivity constant fitted
//!   over a deterministic control family, cross-checked against the actual
//!   cost growth of the family.
//!
//! Because the control domain carries no linear structure, all variations
//! run through two-point convex relaxations of the control (keep the
//! candidate with weight `1 - alpha`, inject a comparison control with
//! weight `alpha`) and through chattering approximations that realize those
//! relaxations with ordinary controls.

pub mod builtins;
pub mod error;
pub mod families;
pub mod ode;
pub mod pmp;
pub mod problem;
pub mod relaxation;
pub mod soc;
pub mod trajectories;

pub use error::{Error, Result};
