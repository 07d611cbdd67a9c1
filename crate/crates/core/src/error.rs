use thiserror::Error;

use crate::matching::MatchStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("relative entropy is infinite: weight {index} is positive where the reference weight vanishes")]
    AbsoluteContinuityViolated { index: usize },

    #[error("operation requires {expected}, got {found}")]
    UnsupportedSpace { expected: &'static str, found: String },

    #[error("restriction functions are not linearly independent (min Gram eigenvalue {min_eigenvalue:e})")]
    DependentRestrictions { min_eigenvalue: f64 },

    #[error("moment matching did not converge: {status:?} after {iterations} iterations (residual {residual:e})")]
    MatchFailed {
        status: MatchStatus,
        iterations: usize,
        residual: f64,
    },

    #[error("macro step {step}: step size collapsed below {min_dt:e} while searching for a feasible extrapolation")]
    StepCollapse { step: usize, min_dt: f64 },

    #[error("every candidate extension is infeasible")]
    AllInfeasible,

    #[error("variance matrix of the restriction functions is singular")]
    SingularVariance,

    #[error("time step {dt:e} exceeds the explicit stability bound {limit:e}")]
    CflViolated { dt: f64, limit: f64 },

    #[error("missing required configuration key `{0}`")]
    MissingKey(String),

    #[error("configuration key `{key}`: {message}")]
    BadValue { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
