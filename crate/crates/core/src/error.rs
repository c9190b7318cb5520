use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error(
        "eigen-solver did not converge after {iterations} iterations (residual {residual:.3e})"
    )]
    EigenNoConvergence { iterations: usize, residual: f64 },

    #[error("deflation projector spans the whole space; no direction left to extract")]
    OverDeflated,

    #[error("solver diverged (NaN) at iteration {0}")]
    Diverged(usize),

    #[error("component {component}: solver did not converge in {iterations} iterations (max violation {violation:.3e})")]
    NotConverged {
        component: usize,
        iterations: usize,
        violation: f64,
    },

    #[error("component {0}: dominant direction of the relaxed solution lies in the deflated span")]
    DegenerateRounding(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("preprocessing: {0}")]
    Preprocess(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures (as opposed to bad input) map to a distinct CLI exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EigenNoConvergence { .. }
                | Error::Diverged(_)
                | Error::NotConverged { .. }
                | Error::DegenerateRounding(_)
                | Error::OverDeflated
        )
    }
}
