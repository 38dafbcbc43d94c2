use std::fmt;
use std::path::{Path, PathBuf};

/// A problem with input data or an output file, located as precisely as the
/// format allows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub message: String,
}

impl DataError {
    pub fn new(message: impl Into<String>) -> Self {
        DataError {
            path: None,
            line: None,
            message: message.into(),
        }
    }

    pub fn at(path: &Path, message: impl Into<String>) -> Self {
        DataError {
            path: Some(path.to_path_buf()),
            line: None,
            message: message.into(),
        }
    }

    pub fn at_line(path: &Path, line: usize, message: impl Into<String>) -> Self {
        DataError {
            path: Some(path.to_path_buf()),
            line: Some(line),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::at(path, e.to_string())
    }
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.path, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{}: {}", p.display(), l, self.message),
            (Some(p), None) => write!(f, "{}: {}", p.display(), self.message),
            _ => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for DataError {}

pub type Result<T> = std::result::Result<T, DataError>;
