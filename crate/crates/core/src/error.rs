use thiserror::Error;

/// Errors raised by the estimators and their supporting numerics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeconvError {
    #[error("kernel {0} does not support this operation")]
    UnsupportedKernel(String),

    #[error("moment is undefined for kernel {0}")]
    UndefinedMoment(String),

    #[error("characteristic function |phi_U| = {value:e} at t = {t} is below the vanishing threshold")]
    VanishingCharacteristicFunction { t: f64, value: f64 },

    #[error("sample is empty")]
    EmptySample,

    #[error("at least two replicate measurements are required, got {0}")]
    InsufficientReplicates(usize),

    #[error("estimator is not defined for {0} data")]
    ModelMismatch(String),

    #[error("zero kernel mass at x = {0}")]
    EmptyNeighborhood(f64),

    #[error("local fit at x = {x} is singular (condition number {condition:e})")]
    SingularLocalFit { x: f64, condition: f64 },

    #[error("coefficient index {k} is outside [-{k0}, {k0}]")]
    IndexOutOfRange { k: i64, k0: u32 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl DeconvError {
    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            DeconvError::ConfigInvalid(_)
                | DeconvError::Parse(_)
                | DeconvError::InsufficientReplicates(_)
                | DeconvError::ModelMismatch(_)
                | DeconvError::UnsupportedKernel(_)
                | DeconvError::EmptySample
                | DeconvError::Io(_)
        )
    }
}

impl From<std::io::Error> for DeconvError {
    fn from(e: std::io::Error) -> Self {
        DeconvError::Io(e.to_string())
    }
}

impl From<csv::Error> for DeconvError {
    fn from(e: csv::Error) -> Self {
        DeconvError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DeconvError>;
