use alloc::string::String;

/// Errors raised by the rendering core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("inconsistent spectral grouping: {0}")]
    InconsistentGrouping(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("degenerate light {light}: shading point coincides with the light position")]
    DegenerateLight { light: usize },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("dangling reference to `{0}`")]
    DanglingReference(String),
    #[error("invariant violated for `{field}`: {reason}")]
    InvariantViolation { field: String, reason: String },
    #[error("routing violation: {0}")]
    Routing(String),
    #[error("incomplete gather: {0}")]
    IncompleteGather(String),
    #[error("malformed record: {0}")]
    Decode(String),
}

pub type Result<T> = core::result::Result<T, Error>;
