use thiserror::Error;

/// Errors produced by the kernels, estimators, oracles and harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument was non-finite, out of range or inconsistent with its companions.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A special function was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// An enumeration or allocation guard was exceeded.
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    /// A normalizer vanished or a distribution collapsed.
    #[error("degenerate instance: {0}")]
    Degenerate(String),
    /// The variance budget cannot be met by any proposal.
    #[error("infeasible constraint: {0}")]
    Infeasible(String),
    /// A configuration value violated an invariant.
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be finite, got {value}")))
    }
}
