use alloc::string::String;
use core::fmt;

/// Error type shared by the whole crate.
///
/// Variants are coarse on purpose: callers branch on the kind (bad input vs.
/// bad internal state), the message carries the specifics.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Operands have incompatible shapes.
    Shape(String),
    /// An index or label is out of range.
    Index(String),
    /// A value is outside the mathematical domain of the operation.
    Domain(String),
    /// Input data violates a precondition (empty set, mixed layouts, ...).
    Invalid(String),
    /// The object is not in a state where the call is meaningful.
    State(String),
}

impl CoreError {
    pub fn shape(msg: impl Into<String>) -> Self {
        CoreError::Shape(msg.into())
    }
    pub fn index(msg: impl Into<String>) -> Self {
        CoreError::Index(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        CoreError::Domain(msg.into())
    }
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::Invalid(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        CoreError::State(msg.into())
    }
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Shape(m) => write!(f, "shape mismatch: {m}"),
            CoreError::Index(m) => write!(f, "index out of range: {m}"),
            CoreError::Domain(m) => write!(f, "domain error: {m}"),
            CoreError::Invalid(m) => write!(f, "invalid input: {m}"),
            CoreError::State(m) => write!(f, "invalid state: {m}"),
        }
    }
}

impl core::error::Error for CoreError {}
