use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Integration, quadrature or an inner Monte Carlo estimate produced a
    /// non-finite or otherwise unusable number.
    #[error("numerical failure in {stage}: {detail}")]
    NumericalFailure { stage: String, detail: String },

    /// A diffusion coefficient left its admissible range (e.g. sigma <= 0).
    #[error("domain violation: {0}")]
    DomainViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(stage: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NumericalFailure {
            stage: stage.into(),
            detail: detail.into(),
        }
    }
}
