use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("expected a scalar loss, got shape {0:?}")]
    Rank(Vec<usize>),
    #[error("batch norm in train mode needs more than one row per channel")]
    DegenerateBatch,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no negatives available: {0}")]
    NoNegatives(&'static str),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (cls {loss_cls}, mi {loss_mi})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss_cls: f64,
        loss_mi: f64,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
