//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside its mathematical domain.
    #[error("domain error: {argument} = {value} violates `{requirement}`")]
    Domain {
        argument: &'static str,
        value: f64,
        requirement: &'static str,
    },

    /// Grid or beam geometry is inconsistent.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A scene failed validation against its invariants.
    #[error("scene error: {0}")]
    Scene(String),

    /// Bad run configuration (keys, ranges, incompatible inputs).
    #[error("configuration error: {0}")]
    Config(String),

    /// A file did not conform to its declared format.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Input data failed content validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// Not enough (or degenerate) data for a statistic.
    #[error("statistics error: {0}")]
    Statistics(String),

    /// Least-squares fit could not be performed.
    #[error("fit error: {0}")]
    Fit(String),

    /// Reference variance carries no thermal excess to normalize by.
    #[error("degenerate reference: v_ref = {v_ref} is within {epsilon} of the shot-noise floor")]
    DegenerateReference { v_ref: f64, epsilon: f64 },

    /// Bright/dark excesses cancel; contrast is undefined.
    #[error("degenerate contrast: |denominator| = {denominator} is below {epsilon}")]
    DegenerateContrast { denominator: f64, epsilon: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(argument: &'static str, value: f64, requirement: &'static str) -> Self {
        Error::Domain {
            argument,
            value,
            requirement,
        }
    }
}
