use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

/// Where a diagnostic points: a file (and line), or an operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    File { path: PathBuf, line: Option<usize> },
    Op(String),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::File { path, line: Some(l) } => write!(f, "{}:{l}", path.display()),
            Location::File { path, line: None } => write!(f, "{}", path.display()),
            Location::Op(op) => write!(f, "{op}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or an invalid configuration; exit status 2.
    #[error("UsageError: {0}")]
    Usage(String),
    #[error("FormatError: {location}: {message}")]
    Format { location: Location, message: String },
    #[error("IOError: {location}: {source}")]
    Io {
        location: Location,
        #[source]
        source: io::Error,
    },
    /// An error from the numerical core, tagged with the operation that
    /// raised it.
    #[error("{}: {op}: {source}", source.kind())]
    Core {
        op: String,
        #[source]
        source: jket_core::Error,
    },
}

impl CliError {
    pub fn format(path: &Path, line: Option<usize>, message: impl Into<String>) -> Self {
        CliError::Format {
            location: Location::File {
                path: path.to_path_buf(),
                line,
            },
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            location: Location::File {
                path: path.to_path_buf(),
                line: None,
            },
            source,
        }
    }

    /// Kind name as printed at the start of the diagnostic.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "UsageError",
            CliError::Format { .. } => "FormatError",
            CliError::Io { .. } => "IOError",
            CliError::Core { source, .. } => source.kind(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Attach an operation name to core results.
pub trait CoreContext<T> {
    fn during(self, op: &str) -> Result<T>;
}

impl<T> CoreContext<T> for jket_core::Result<T> {
    fn during(self, op: &str) -> Result<T> {
        self.map_err(|source| CliError::Core { op: op.into(), source })
    }
}
