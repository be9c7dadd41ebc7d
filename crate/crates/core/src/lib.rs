//! Error-controlled rigid-body contact simulation.
//!
//! Each time step is an unconstrained convex problem over next-step
//! velocities (compliant point contact, lagged regularized friction,
//! near-rigid joint limits and effort-limited linear actuation). The convex
//! steps are wrapped in step-doubling or trapezoid error estimation and an
//! adaptive step-size controller that measures error on positions only.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: scenario schema, validation and index bookkeeping.
//! - [`dynamics`]: mass matrix, bias forces and position updates.
//! - [`geometry`]: narrow-phase queries producing contact frames and Jacobians.
//! - [`contact`]: continuous force laws and discrete incremental potentials.
//! - [`solver`]: Newton's method with exact linesearch and Hessian reuse.
//! - [`external`]: controllers and their implicit linearized coupling.
//! - [`integrate`]: convex steps, error estimation, step-size control and the
//!   smooth-ODE baselines used for comparison.
//! - [`scenarios`]: the builtin scene registry.
//! - [`cli`]: the command-line front end.

pub mod cli;
pub mod contact;
pub mod dynamics;
pub mod error;
pub mod external;
pub mod geometry;
pub mod integrate;
pub mod linalg;
pub mod model;
pub mod scenarios;
pub mod solver;

pub use error::{Error, Result};
pub use integrate::{advance, Run, RunFailure, RunStats, Simulator, StepRecord};
pub use model::{assemble_model, IntegratorConfig, Model, Scheme, SystemState};
