use std::fmt;
use std::path::Path;

use pilir::checkpoint::CheckpointError;
use pilir::config::ConfigError;
use pilir::evaluation::EvalError;
use pilir::networks::ModelError;
use pilir::pde::ProblemError;

/// Error categories, each printed as `error[<tag>]: ...`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Config,
    Io,
    Checkpoint,
    Shape,
    Eval,
    Train,
    NonFinite,
}

impl Kind {
    pub fn tag(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Config => "config",
            Kind::Io => "io",
            Kind::Checkpoint => "checkpoint",
            Kind::Shape => "shape",
            Kind::Eval => "eval",
            Kind::Train => "train",
            Kind::NonFinite => "nan",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage | Kind::Config => 2,
            Kind::NonFinite => 3,
            _ => 1,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::new(Kind::Io, format!("{}: {err}", path.display()))
    }

    /// The message on a single line.
    pub fn line(&self) -> String {
        let flat: Vec<&str> = self.message.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        format!("error[{}]: {}", self.kind.tag(), flat.join("; "))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(Kind::Config, e.to_string())
    }
}

impl From<ProblemError> for CliError {
    fn from(e: ProblemError) -> Self {
        CliError::new(Kind::Config, e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::new(Kind::Checkpoint, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let kind = match e {
            ModelError::ParamMismatch(_) => Kind::Shape,
            _ => Kind::Eval,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::new(Kind::Eval, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
