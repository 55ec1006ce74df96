use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: &'static str },
    #[error("non-finite entry in input matrix")]
    NonFinite,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("requested rank {r} out of range for a {n}x{n} matrix")]
    RankOutOfRange { r: usize, n: usize },
    #[error("cannot form {k} clusters from {n} points")]
    TooFewPoints { n: usize, k: usize },
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("label {label} outside alphabet of size {r}")]
    LabelOutOfRange { label: usize, r: usize },
    #[error("closed form unavailable: {0}")]
    NoClosedForm(&'static str),
    #[error("input outside the closed-form domain: {0}")]
    OutsideDomain(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: &'static str) -> Error {
    Error::InvalidParameter { name, reason }
}
