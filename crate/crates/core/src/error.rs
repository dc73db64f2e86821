use thiserror::Error;

pub type Result<T, E = HdgError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HdgError {
    #[error("quadrature order {order} not supported (max {max})")]
    UnsupportedQuadrature { order: usize, max: usize },

    #[error("polynomial degree {degree} not supported (max {max})")]
    UnsupportedDegree { degree: usize, max: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("local system on element {element} is singular: {reason}")]
    SingularLocalSystem { element: usize, reason: String },

    #[error(
        "I - lambda*U^W is (near) singular on element {element} for lambda = {lambda} \
         (condition {condition:.3e}); lambda is outside the admissible range, which shrinks like 1/h"
    )]
    ResolventSingular {
        element: usize,
        lambda: f64,
        condition: f64,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("{what} did not converge in {iterations} iterations (history: {history:?})")]
    NoConvergence {
        what: String,
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("problem size {size} exceeds the limit {limit}")]
    SizeGuard { size: usize, limit: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unsupported request: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HdgError {
    /// Configuration problems as opposed to numerical failures.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            HdgError::InvalidConfig(_)
                | HdgError::UnsupportedDegree { .. }
                | HdgError::UnsupportedQuadrature { .. }
                | HdgError::SizeGuard { .. }
                | HdgError::Unsupported(_)
        )
    }
}
