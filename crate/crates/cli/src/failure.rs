use std::fmt;
use std::path::Path;

/// Why a command stopped. Each category maps to its own exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Config(String),
    Io {
        path: String,
        source: std::io::Error,
    },
    Module {
        module: &'static str,
        source: lomatch::Error,
    },
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) | Failure::Config(_) => 2,
            Failure::Io { .. } => 3,
            Failure::Module { .. } => 4,
        }
    }

    pub fn category(&self) -> &str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Config(_) => "config",
            Failure::Io { .. } => "io",
            Failure::Module { module, .. } => module,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Failure::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Config(m) => write!(f, "error[{}]: {m}", self.category()),
            Failure::Io { path, source } => write!(f, "error[io]: {path}: {source}"),
            Failure::Module { module, source } => write!(f, "error[{module}]: {source}"),
        }
    }
}

impl std::error::Error for Failure {}

/// Tags a core error with the module it came from.
pub trait InModule<T> {
    fn in_module(self, module: &'static str) -> Result<T, Failure>;
}

impl<T> InModule<T> for lomatch::Result<T> {
    fn in_module(self, module: &'static str) -> Result<T, Failure> {
        self.map_err(|source| Failure::Module { module, source })
    }
}
