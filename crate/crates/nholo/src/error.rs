//! Error types shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("point {point:?} outside field domain: {reason}")]
    Domain { point: Vec<f64>, reason: String },
    #[error("requested derivative order {requested} exceeds declared smoothness {declared}")]
    Order { requested: usize, declared: usize },
    #[error("expression error at {line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("quadrature failed: {0}")]
    Quadrature(String),
    #[error("non-finite value produced by field evaluation")]
    NonFinite,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("singular metric block at point {point:?} (det = {det:e})")]
    SingularMetric { point: Vec<f64>, det: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolutionError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("psi residual {max:e} exceeds tolerance {tol:e} on verification grid")]
    PsiResidual { max: f64, tol: f64 },
    #[error("generating function degenerate: {0}")]
    GeneratorDegeneracy(String),
    #[error("division by vanishing {0} on domain")]
    Division(String),
    #[error("metric does not match the required ansatz: {0}")]
    AnsatzShape(String),
    #[error("sign change of {0} inside connected domain")]
    Branch(String),
    #[error("Finsler re-encoding incompatibility |Theta_1 - Theta_2| = {defect:e} > {tol:e}")]
    Compatibility { defect: f64, tol: f64 },
    #[error("radicand of required sign not available: {0}")]
    RadicandSign(String),
    #[error("horizon band intersects requested domain: {0}")]
    Horizon(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LagrangeError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("degenerate Hessian of the Lagrangian at {point:?} (det = {det:e})")]
    DegenerateHessian { point: Vec<f64>, det: f64 },
    #[error("trajectory integration failed: {0}")]
    Integration(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("metric block lost invertibility at node {node:?} (det = {det:e})")]
    Degeneration { node: (usize, usize), det: f64 },
    #[error("step rejected: {0}")]
    Stability(String),
    #[error("quadrature failure in functional evaluation: {0}")]
    Quadrature(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedosovError {
    #[error("truncation overflow: result needs Deg > {deg_max} (term dropped)")]
    TruncationOverflow { deg_max: u32 },
    #[error("derivative order {requested} beyond star-product cap {cap}")]
    Order { requested: usize, cap: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}
