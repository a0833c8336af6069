use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid value for {what}: {detail}")]
    InvalidValue { what: &'static str, detail: String },
    #[error("expensive covariates missing for selected subject {0}")]
    MissingCovariates(usize),
    #[error("non-finite linear predictor for subject {0}")]
    NonFiniteLinearPredictor(usize),
    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    #[error("singular matrix: {0}")]
    Singular(&'static str),
    #[error("non-finite acceptance ratio at iteration {0}")]
    NonFiniteAcceptance(usize),
    #[error("zero variance: {0}")]
    ZeroVariance(&'static str),
    #[error("too few values for {what}: need at least {need}, got {got}")]
    TooFew {
        what: &'static str,
        need: usize,
        got: usize,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidValue {
            what,
            detail: detail.into(),
        }
    }
}
