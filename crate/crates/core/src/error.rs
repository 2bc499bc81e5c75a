use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("cannot parse {what} `{input}`: {reason}")]
    Parse {
        what: &'static str,
        input: String,
        reason: String,
    },

    #[error("unsupported subgroup: {0}")]
    UnsupportedSubgroup(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("rotation angle {0} has a finite continued fraction (rational)")]
    RationalAngle(f64),

    #[error("element {0} does not belong to the group")]
    NotInGroup(String),

    #[error("requested tower coverage {requested:.6} is unattainable; best attainable {best:.6}")]
    UnattainableCoverage { requested: f64, best: f64 },

    #[error("column count {count} exceeds the cap of {cap}")]
    TooManyColumns { count: usize, cap: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("extending group must be infinite: {0}")]
    FiniteExtension(String),

    #[error("tower half-height exceeded the cap of {cap}")]
    HalfHeightCap { cap: usize },

    #[error("translation elements must be distinct")]
    DuplicateElement,

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> LabError {
    LabError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
