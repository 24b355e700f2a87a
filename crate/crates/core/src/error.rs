use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: field does not live on the expected grid")]
    GridMismatch,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("linear solver failed: {0}")]
    LinearSolver(String),

    #[error("eigensolver did not converge after {iterations} iterations (last residual {residual:.3e})")]
    EigenNonConvergence { iterations: usize, residual: f64 },

    #[error("{what} search exhausted its budget of {budget} steps")]
    SearchExhausted { what: &'static str, budget: usize },

    #[error("enclosing domain clearance violated: {0}")]
    Clearance(String),

    #[error("interpolation point ({0:.6}, {1:.6}) outside source grid")]
    InterpolationOutOfRange(f64, f64),

    #[error("singular nonlinearity evaluated at t = 0 with eps = 0")]
    SingularArgument,

    #[error("solver did not converge: {0}")]
    SolverNonConvergence(String),

    #[error("invariant gate failed: {0}")]
    GateFailed(String),

    #[error("scenario config errors:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
