//! Certifier and bubble-flow simulator for the fractional Nirenberg problem
//! on the sphere S^n.
//!
//! Given a candidate curvature function K (a closed-form expression or an
//! explicit list of flat critical points), the library locates and classifies
//! the critical points of K, builds the interaction matrices of the flat
//! stratum, enumerates the critical points at infinity of the associated
//! variational problem, and evaluates an integer-valued existence criterion:
//! when the total degree S differs from 1, the prescribed-curvature equation
//! has a solution. A companion finite-dimensional flow simulates the movement
//! of bubble parameters (centres and concentrations) under the reduced
//! gradient dynamics, exhibiting blow-up along the certified configurations.
//!
//! Modules follow the pipeline:
//!
//! * [`geometry`]: sphere points, tangent frames, geodesic charts.
//! * [`expr`]: the expression language for closed-form K.
//! * [`critpoints`]: critical-point detection and flatness fitting.
//! * [`constants`]: the Beta/Gamma integral constants of the problem.
//! * [`interaction`]: interaction matrices and their least eigenvalues.
//! * [`census`]: enumeration of critical points at infinity and the
//!   existence criterion.
//! * [`flow`]: the reduced bubble dynamics.
//! * [`driver`]: problem files, reports, and the end-to-end pipeline.

pub mod census;
pub mod constants;
pub mod critpoints;
// pub mod driver;
pub mod error;
pub mod expr;
pub mod flow;
pub mod geometry;
pub mod interaction;
pub mod linalg;
pub mod quad;

pub use error::{Error, Result};
