use std::fmt;
use std::path::{Path, PathBuf};

/// Exit statuses. Each failure class gets its own code so scripts can tell
/// a typo in a config from a corrupt input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(i32)]
pub enum ExitCode {
    Success = 0,
    Config = 2,
    Io = 3,
    Numerical = 4,
    MalformedInput = 5,
    GeometryMismatch = 6,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Numerical(String),
    Malformed {
        path: PathBuf,
        msg: String,
    },
    Geometry(String),
}

impl CliError {
    pub fn code(&self) -> ExitCode {
        match self {
            Self::Config(_) => ExitCode::Config,
            Self::Io { .. } => ExitCode::Io,
            Self::Numerical(_) => ExitCode::Numerical,
            Self::Malformed { .. } => ExitCode::MalformedInput,
            Self::Geometry(_) => ExitCode::GeometryMismatch,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn malformed(path: &Path, msg: impl Into<String>) -> Self {
        Self::Malformed {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(msg) => write!(f, "config error: {msg}"),
            Self::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Self::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Self::Malformed { path, msg } => {
                write!(f, "{}: malformed input: {msg}", path.display())
            }
            Self::Geometry(msg) => write!(f, "geometry mismatch: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<fshbmap::Error> for CliError {
    fn from(e: fshbmap::Error) -> Self {
        use fshbmap::Error as E;
        match e {
            E::InvalidInput(m) | E::InvalidSpec(m) => Self::Config(m),
            E::Shape(m) => Self::Geometry(m),
            E::Format(m) => Self::Config(format!("unexpected malformed data: {m}")),
            e @ (E::NotPositiveDefinite { .. } | E::Numerical(_)) => Self::Numerical(e.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
