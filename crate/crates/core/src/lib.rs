//! Feedback optimization of steady-state plants with a discrete-time
//! projected-gradient controller.
//!
//! The controller drives the input `u` of a plant with steady-state map
//! `y = h(u)` toward a first-order optimal point of
//!
//! ```text
//! minimize Phi(u, y)  subject to  y = h(u),  A u <= b,  C y <= d
//! ```
//!
//! using only the measured output and the sensitivity `grad h(u)`. Each step
//! solves a small strictly convex QP (see [`qp`]). The crate also provides
//! the Lyapunov certificate and step-size bound ([`certificates`]), the
//! augmented saddle-point baseline ([`baselines`]), tangent-cone projection
//! ([`tangent`]) and a closed-loop simulation harness ([`harness`]).

pub mod baselines;
pub mod certificates;
pub mod controller;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod qp;
pub mod tangent;

pub use error::{Error, Result};
pub use model::{ConstantMetric, FnObjective, FnPlant, Metric, Objective, Plant, Polyhedron, ProblemSpec};
pub use qp::{enumerate_oracle, kkt_residual, solve_qp, QpProblem, QpSolution, QpWarning};
