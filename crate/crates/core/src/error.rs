use thiserror::Error;

/// Errors raised by the simulator and its building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter failed validation. Displays as `"<field> must be <constraint>"`.
    #[error("{field} must be {constraint}")]
    InvalidParameter { field: String, constraint: String },

    #[error("user {user}: no packets served, average delay undefined")]
    NoPacketsServed { user: usize },

    #[error("load outside stability region: {detail}")]
    OutsideStabilityRegion { detail: String },

    #[error("curve grids differ: {detail}")]
    GridMismatch { detail: String },

    #[error("invariant violated at slot {slot}: {detail}")]
    InvariantViolated { slot: u64, detail: String },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            constraint: constraint.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Fails with `InvalidParameter` unless `value` is finite and strictly positive.
pub(crate) fn ensure_positive(field: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, "positive"))
    }
}
