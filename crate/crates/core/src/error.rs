//! Error taxonomy shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A chunk/tile/segment does not fit the memory it must be placed into.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Local-mode registration ran out of unclaimed store slots.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// Operand dimensions are inconsistent.
    #[error("shape error: {0}")]
    Shape(String),

    /// An index points outside its logical tensor.
    #[error("bounds error: {0}")]
    Bounds(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A snapshot file is corrupt, truncated, or of an unknown version.
    #[error("format error: {0}")]
    Format(String),

    /// Materialization of a tensor above the safety cap was refused.
    #[error("refusal: {0}")]
    Refusal(String),

    /// Training produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
