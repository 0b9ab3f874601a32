use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand shapes disagree; `detail` names the offending axes.
    #[error("{op}: dimension error: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An operation produced NaN or an infinity.
    #[error("{op}: non-finite value in output of node {node} (shape {shape:?})")]
    NonFinite {
        op: &'static str,
        node: usize,
        shape: Vec<usize>,
    },

    /// A caller broke an operation's precondition.
    #[error("{op}: {detail}")]
    Contract { op: &'static str, detail: String },

    /// A model or data configuration cannot be realised.
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }
}
