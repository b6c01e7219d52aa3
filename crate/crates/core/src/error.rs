use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported constellation order {0} (supported: 4, 16, 64)")]
    UnsupportedOrder(usize),

    #[error("unsupported relay rate R0={0} (supported here: {1})")]
    UnsupportedRelayRate(u32, &'static str),

    #[error("bit position {pos} out of range for {bits}-bit labels")]
    BitOutOfRange { pos: usize, bits: usize },

    #[error("symbol index {index} out of range for constellation of order {order}")]
    SymbolOutOfRange { index: usize, order: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("LDPC construction failed for n={n} (seed {seed}): {reason}")]
    Construction { n: usize, seed: u64, reason: String },

    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
