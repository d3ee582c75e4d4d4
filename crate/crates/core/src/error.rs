use thiserror::Error;

use crate::counts::ChanceMatrix;

/// Which margin a marginal-probability failure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Row,
    Column,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::Row => f.write_str("row"),
            Axis::Column => f.write_str("column"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} index {index} out of range (bound {bound})")]
    CategoryOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("table has no observations (N = 0)")]
    EmptyTable,

    #[error("{axis} {index} has zero marginal chance but positive margin-missing count")]
    ZeroMarginal { axis: Axis, index: usize },

    #[error("row {row} has margin-missing mass but no joint counts to apportion it")]
    UnapportionableRow { row: usize },

    #[error("EM did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        last: Box<ChanceMatrix>,
    },

    #[error("precision field inconsistent at cell ({row}, {col}): count and fitted chance disagree")]
    InconsistentField { row: usize, col: usize },

    #[error("capacitance matrix is numerically singular (condition estimate {condition:e}); use a stronger prior")]
    SingularKernel { condition: f64 },

    #[error("internal inconsistency: {0}")]
    Internal(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::ZeroMarginal { .. }
                | Error::UnapportionableRow { .. }
                | Error::NotConverged { .. }
                | Error::InconsistentField { .. }
                | Error::SingularKernel { .. }
                | Error::Internal(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
