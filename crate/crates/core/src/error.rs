use alloc::string::String;

/// Errors raised by the diagnostics core.
///
/// Variants map onto the failure classes the tool distinguishes: malformed
/// input, mathematically invalid objects, violated admissibility or
/// predictability rules, inconsistent options and failed runs.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("admissibility error: {0}")]
    Admissibility(String),
    #[error("sequencing error: {0}")]
    Sequencing(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("run error at step {step}: {reason}")]
    Run { step: usize, reason: String },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}
