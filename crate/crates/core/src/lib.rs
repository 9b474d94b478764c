//! Fault-tolerant flight-control stack for a jet-powered multibody robot.
//!
//! The crate is organized around the control pipeline:
//!
//! - [`model`] / [`multibody`] — robot description, floating-base
//!   kinematics and dynamics (mass matrix, Coriolis, gravity, centroidal
//!   momentum).
//! - [`momentum`] — centroidal momentum rate `A(q) T + F_G` and the map
//!   from inputs `u = (Ṫ, ṡ)` to momentum acceleration.
//! - [`qp`] — dense box-constrained least-squares QP solver.
//! - [`controller`] — the momentum QP flight controller with tanh-
//!   parametrized bounds, fault saturation and weight scheduling.
//! - [`fault`] — RPM-based turbine fault detection.
//! - [`refgen`] — offline nonlinear program producing post-fault hover
//!   references (attitude, posture, thrusts).
//! - [`plant`] / [`scenario`] — deterministic fixed-step simulator and the
//!   scripted fault-recovery scenario runner.
//! - [`telemetry`] — CSV telemetry schema, writer and summary statistics.

pub mod controller;
pub mod fault;
pub mod math;
pub mod model;
pub mod momentum;
pub mod multibody;
pub mod plant;
pub mod qp;
pub mod refgen;
pub mod scenario;
pub mod telemetry;

pub use model::{ModelError, RobotModel};
pub use multibody::{Configuration, SystemVelocity};
