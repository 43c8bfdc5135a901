use thiserror::Error;

/// Errors surfaced by the exact engine.  Symbolic operations refuse to
/// return silently-wrong data: if a truncation window cannot be certified,
/// or an exponent would leave the quarter-integer lattice, the operation
/// fails with one of these.
#[derive(Error, Debug, Clone)]
pub enum Error {
    /// A truncation window for the result could not be certified from the
    /// windows of the operands.
    #[error("window error: {0}")]
    Window(String),

    /// An argument is outside the domain of the operation (non-unit leading
    /// term for inversion, bad index, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A series expansion or numeric evaluation hit a pole (for symbolic
    /// expansions: a factor sitting exactly on the expansion contour).
    #[error("pole: {0}")]
    Pole(String),

    /// An exponent fell off the quarter-integer (q) / half-integer
    /// (spectral) lattice.
    #[error("lattice violation: {0}")]
    Lattice(String),

    /// Numeric evaluation failed to reach the requested tolerance.
    #[error("tolerance not reached: {0}")]
    Tolerance(String),
}

pub type Result<T> = std::result::Result<T, Error>;
