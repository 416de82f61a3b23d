use thiserror::Error;

#[derive(Debug, Error)]
pub enum IpsError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("operator not well-posed: smallest eigenvalue estimate {lambda:.4e} below floor {floor:.4e}")]
    NotWellPosed { lambda: f64, floor: f64 },
    #[error("inverse iteration did not converge after {iters} steps (last estimate {lambda:.4e})")]
    EigenNoConvergence { iters: usize, lambda: f64 },
    #[error("linear solver stalled: relative residual {residual:.3e} after {iters} iterations")]
    SolverNoConvergence { iters: usize, residual: f64 },
    #[error("size guard exceeded: {0}")]
    SizeGuard(String),
    #[error("quadrature tolerance not met: value {value:.6e}, error estimate {error:.3e}")]
    Quadrature { value: f64, error: f64 },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IpsError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(IpsError::Invalid(msg.into()))
}
