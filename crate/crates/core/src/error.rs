use alloc::string::String;

/// Error kinds raised by the numerical core and the models built on it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("numeric error in {op}: non-finite value produced")]
    Numeric { op: &'static str },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Short machine-readable kind name, used in CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "ShapeError",
            Error::Numeric { .. } => "NumericError",
            Error::Usage(_) => "UsageError",
            Error::Data(_) => "DataError",
            Error::Sampling(_) => "SamplingError",
            Error::Config(_) => "ConfigError",
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
