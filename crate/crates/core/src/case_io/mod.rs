//! File formats: MATPOWER case subset, the native network format, zone
//! division files and wind injection files.

mod division;
mod matpower;
mod native;
mod wind;

pub use division::{load_zone_division, serialize_zone_division};
pub use matpower::parse_matpower;
pub use native::{parse_network, serialize_network};
pub use wind::parse_wind;

use thiserror::Error;

use crate::network::{DivisionError, NetworkError};

#[derive(Debug, Error, PartialEq)]
pub enum CaseError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("missing required block {0}")]
    MissingBlock(&'static str),
    #[error("{block} row {row}: {msg}")]
    BadRow {
        block: &'static str,
        row: usize,
        msg: String,
    },
    #[error("gencost row {row}: nonlinear cost model")]
    NonlinearCost { row: usize },
    #[error("gencost has {gencost} rows for {gens} generators")]
    GencostCount { gencost: usize, gens: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Division(#[from] DivisionError),
}

impl CaseError {
    pub(crate) fn syntax(line: usize, col: usize, msg: impl Into<String>) -> Self {
        CaseError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }
}
