use thiserror::Error;

/// Errors raised by model evaluation, training and control.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("function returned a non-finite value")]
    NonFiniteEvaluation,

    #[error("state trajectory became non-finite at step {step}")]
    NonFiniteState { step: usize },

    #[error("loss Hessian is not positive definite at the evaluation point")]
    HessianNotPD,

    #[error("regularizer curvature is not positive for parameter {index}")]
    ZeroCurvature { index: usize },

    #[error("prior covariance requires positive rho_x and rho_theta (or an explicit P0)")]
    ZeroRegularization,

    #[error("reference signal is constant; fit rate undefined")]
    ConstantReference,

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("estimate diverged at epoch {epoch}, sample {sample}")]
    Diverged { epoch: usize, sample: usize },

    #[error("training failed at epoch {epoch}, sample {sample}: {source}")]
    Training {
        epoch: usize,
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// True for errors that stem from numerical breakdown rather than from
    /// malformed input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite
            | Error::NonFiniteEvaluation
            | Error::NonFiniteState { .. }
            | Error::HessianNotPD
            | Error::ZeroCurvature { .. }
            | Error::Diverged { .. } => true,
            Error::Training { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
