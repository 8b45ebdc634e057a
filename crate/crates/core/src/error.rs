use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: rating {value} is not finite")]
    NonFiniteRating { line: usize, value: f32 },

    #[error("triple #{position} (user {user}, item {item}) is outside a {m}x{n} matrix")]
    IndexOutOfBounds {
        position: usize,
        user: u64,
        item: u64,
        m: usize,
        n: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("value {value} at packed index {index} overflows binary16; rescale ratings before using half-precision storage")]
    HalfOverflow { index: usize, value: f32 },

    #[error("system{} is not positive definite (pivot {pivot} = {value})", row_label(.row))]
    NotPositiveDefinite {
        row: Option<usize>,
        pivot: usize,
        value: f32,
    },

    #[error("{} system(s) failed to solve; first: {}", .0.len(), .0.first().map(|e| e.to_string()).unwrap_or_default())]
    SolveFailures(Vec<Error>),

    #[error("SGD diverged at epoch {epoch} (learning rate {learning_rate}); try a smaller initial learning rate")]
    Divergence { epoch: usize, learning_rate: f32 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

fn row_label(row: &Option<usize>) -> String {
    row.map(|r| format!(" for row {r}")).unwrap_or_default()
}

impl Error {
    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::HalfOverflow { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::SolveFailures(_)
                | Error::Divergence { .. }
        )
    }
}
