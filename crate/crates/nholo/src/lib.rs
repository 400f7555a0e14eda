//! Nonholonomic geometry toolkit.
//!
//! The crate models (pseudo) Riemannian metrics through nonlinear-connection
//! (N-connection) splittings: adapted frames, the canonical d-connection and
//! its curvature, exact off-diagonal solutions by anholonomic deformation,
//! nonholonomic Ricci flows with Perelman-type monitors, effective
//! Lagrange/almost-Kaehler models, Dirac d-operators, and Moyal/Fedosov star
//! products to low order.
//!
//! Everything is built on a small forward-mode jet engine ([`jet`]): scalar
//! fields carry analytic partial derivatives to order 4, so curvature and
//! residual evaluations have no finite-difference truncation error.

pub mod error;
pub mod jet;
pub mod expr;
pub mod field;
pub mod linalg;
pub mod quadrature;
pub mod geometry;
pub mod connections;
pub mod solutions;
pub mod lagrange;
pub mod ricciflow;
pub mod clifford;
pub mod fedosov;
pub mod report;

pub use error::{FedosovError, FieldError, FlowError, GeomError, LagrangeError, SolutionError};
pub use field::{Chart, Domain, JetValue, ScalarField};
pub use geometry::{AnholonomyData, DMetric, FrameBasis, NConnection};
