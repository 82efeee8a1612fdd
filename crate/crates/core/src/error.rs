use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("branch {from}-{to} has zero series impedance")]
    SingularBranch { from: usize, to: usize },

    #[error("power flow did not converge in {iterations} iterations (max mismatch {mismatch:.3e} pu)")]
    Divergence { iterations: usize, mismatch: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("network algebraic solve failed after {sweeps} sweeps (residual {residual:.3e} pu)")]
    AlgebraicFailure { sweeps: usize, residual: f64 },

    #[error("tripping unit {unit} would leave an island without generation")]
    Islanding { unit: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric guard: {0}")]
    NumericGuard(String),

    #[error("initialization residual {residual:.3e} exceeds threshold at state `{state}`")]
    Initialization { state: String, residual: f64 },

    #[error("operating point is not an equilibrium: max derivative {residual:.3e} at `{state}`")]
    NotEquilibrium { state: String, residual: f64 },

    #[error("eigensolver failed to converge: {0}")]
    Eigen(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("unknown generator id {id}; available ids: {available:?}")]
    UnknownUnit { id: usize, available: Vec<usize> },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Structure(_)
                | Error::SingularBranch { .. }
                | Error::Json(_)
                | Error::Io(_)
                | Error::UnknownUnit { .. }
                | Error::Domain(_)
                | Error::UndefinedRatio(_)
                | Error::Islanding { .. }
        )
    }
}
