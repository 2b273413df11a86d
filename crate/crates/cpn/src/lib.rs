//! File formats, run configuration, training driver and tooling around
//! `cpn_core`.

use std::io;
use std::path::{Path, PathBuf};

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod driver;
pub mod formats;
pub mod pgm;
pub mod suite;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{}: {source}", file.display())]
    Io { file: PathBuf, source: io::Error },
    #[error("{} at byte {offset}: {msg}", file.display())]
    Parse { file: PathBuf, offset: usize, msg: String },
    #[error("{}: {msg}", file.display())]
    Invalid { file: PathBuf, msg: String },
}

impl FormatError {
    pub fn io(file: &Path, source: io::Error) -> Self {
        Self::Io {
            file: file.to_path_buf(),
            source,
        }
    }

    pub fn invalid(file: &Path, msg: impl ToString) -> Self {
        Self::Invalid {
            file: file.to_path_buf(),
            msg: msg.to_string(),
        }
    }

    /// Wraps a JSON error, converting its line and column to a byte offset.
    pub fn json(file: &Path, text: &str, e: serde_json::Error) -> Self {
        Self::Parse {
            file: file.to_path_buf(),
            offset: byte_offset(text, e.line(), e.column()),
            msg: e.to_string(),
        }
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

/// Reads and parses a JSON file.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| FormatError::json(path, &text, e))
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| FormatError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_from_line_and_column() {
        let text = "{\n  \"a\": 1,\n  \"b\": ]\n}";
        let e = serde_json::from_str::<serde_json::Value>(text).unwrap_err();
        let off = byte_offset(text, e.line(), e.column());
        assert_eq!(&text[off..off + 1], "]");
        assert_eq!(byte_offset("abc", 0, 0), 0);
    }
}
