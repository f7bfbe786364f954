use std::path::PathBuf;

use thiserror::Error;

use crate::layout::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coordinate axis named in range errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::X => f.write_str("x"),
            Axis::Y => f.write_str("y"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{axis} coordinate {value} outside [0, {limit}]")]
    CoordinateRange { axis: Axis, value: f64, limit: f64 },

    #[error("token index {index} outside vocabulary of {size}")]
    TokenRange { index: usize, size: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid layout: {}", join_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("prompt parse error in phrase {phrase}: {message}")]
    Prompt { phrase: usize, message: String },

    #[error("JSON error at byte {offset}: {message}")]
    Json { offset: usize, message: String },

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("annotation {annotation_id} references unknown category {category_id}")]
    UnknownCategory { annotation_id: u64, category_id: u64 },

    #[error("annotation {annotation_id} references unknown image {image_id}")]
    UnknownImage { annotation_id: u64, image_id: u64 },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("3D box not encodable: corner {corner} {reason}")]
    NotEncodable { corner: usize, reason: &'static str },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Wraps a serde_json error with the byte offset of the failure in `input`.
    pub(crate) fn json(input: &[u8], err: serde_json::Error) -> Self {
        Error::Json { offset: byte_offset(input, err.line(), err.column()), message: err.to_string() }
    }
}

/// Converts serde_json's 1-based line / column into a byte offset.
fn byte_offset(input: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut start = 0;
    for _ in 1..line {
        match input[start..].iter().position(|&b| b == b'\n') {
            Some(p) => start += p + 1,
            None => return input.len(),
        }
    }
    (start + column.saturating_sub(1)).min(input.len())
}
