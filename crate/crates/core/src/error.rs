use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} is undefined at {at}")]
    Domain { what: &'static str, at: f64 },

    #[error("point {0:?} lies outside the domain")]
    OutsideDomain(Vec<f64>),

    #[error("point is within {cells} grid cells of the boundary")]
    NearBoundary { cells: usize },

    #[error("quadrature did not converge: value {value:e}, error estimate {error:e}")]
    Quadrature { value: f64, error: f64 },

    #[error("grid solver stalled after {iterations} sweeps at residual {residual:e}")]
    GridSolver { iterations: usize, residual: f64 },

    #[error("critical point iteration left the domain after {iterations} steps")]
    Divergence { iterations: usize },

    #[error("Hessian is singular")]
    SingularHessian,

    #[error("critical point is degenerate: smallest singular value {sigma_min:e} below {threshold:e}")]
    Degenerate { sigma_min: f64, threshold: f64 },

    #[error("need at least {needed} data points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("data span {decades:.2} decades, need {needed}")]
    InsufficientSpan { decades: f64, needed: f64 },

    #[error("peak value {u0} does not exceed alpha_N = {alpha}; solution is not concentrated")]
    NotConcentrated { u0: f64, alpha: f64 },

    #[error("closed-form projection requires a centered bubble")]
    OffCenter,
}
