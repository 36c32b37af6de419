use std::fmt;
use std::path::{Path, PathBuf};

use oodx_core::OodError;
use serde::Serialize;

/// An engine error plus the file it concerns, when known.
#[derive(Debug)]
pub struct CmdError {
    pub error: OodError,
    pub path: Option<PathBuf>,
}

pub type CmdResult<T> = std::result::Result<T, CmdError>;

impl From<OodError> for CmdError {
    fn from(error: OodError) -> Self {
        Self { error, path: None }
    }
}

impl fmt::Display for CmdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.path {
            Some(p) => write!(f, "{}: {}: {}", self.error.name(), p.display(), self.error),
            None => write!(f, "{}: {}", self.error.name(), self.error),
        }
    }
}

#[derive(Serialize)]
struct JsonError<'a> {
    error: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

impl CmdError {
    pub fn usage(message: impl Into<String>) -> Self {
        OodError::InvalidInput(message.into()).into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&JsonError {
            error: self.error.name(),
            message: self.error.to_string(),
            path: self.path.as_ref().map(|p| p.display().to_string()),
        })
        .expect("error serializes")
    }
}

pub trait At<T> {
    /// Attaches `path` to the error unless one is already set.
    fn at(self, path: &Path) -> CmdResult<T>;
}

impl<T> At<T> for oodx_core::Result<T> {
    fn at(self, path: &Path) -> CmdResult<T> {
        self.map_err(|error| CmdError {
            error,
            path: Some(path.to_path_buf()),
        })
    }
}
