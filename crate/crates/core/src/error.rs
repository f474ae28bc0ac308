use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A field or coefficient returned NaN/inf while integrating a path.
    #[error("non-finite {what} at sample {sample}, step {step}")]
    NonFinite {
        what: &'static str,
        sample: usize,
        step: usize,
    },

    #[error("time-integral truncation bound {bound:e} exceeds tolerance {tolerance:e}")]
    TruncationTooLarge { bound: f64, tolerance: f64 },

    #[error("no admissible horizon: data size {eps0} exceeds ball radius {radius}")]
    NoAdmissibleTau { eps0: f64, radius: f64 },

    #[error("unknown field `{0}`")]
    UnknownField(String),

    #[error("bound violated: {0}")]
    BoundViolation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed field dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
