use thiserror::Error;

use crate::dp::Ledger;

/// Errors raised anywhere in the synthesis pipeline.
///
/// Variants are grouped by the exit-code class the CLI maps them to.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid workload: {0}")]
    InvalidWorkload(String),

    #[error("visibility violation: {0}")]
    Visibility(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("selection failed: {0}")]
    Selection(String),

    #[error("privacy budget exceeded: requested {requested:.6e}, remaining {remaining:.6e}")]
    BudgetExceeded { requested: f64, remaining: f64 },

    #[error("budget exhausted during run: {source}")]
    BudgetAborted {
        #[source]
        source: Box<Error>,
        ledger: Ledger,
    },

    #[error("scalability limit: {0}")]
    Scalability(String),

    #[error("model structure: {0}")]
    Structure(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used for exit codes and result-table status columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Budget,
    Scalability,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::BudgetExceeded { .. } | Error::BudgetAborted { .. } => ErrorClass::Budget,
            Error::Scalability(_) => ErrorClass::Scalability,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::EmptyDataset(_) => ErrorClass::Io,
            _ => ErrorClass::Config,
        }
    }
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Budget => 3,
            ErrorClass::Scalability => 4,
            ErrorClass::Io => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Config => "config_error",
            ErrorClass::Budget => "budget_error",
            ErrorClass::Scalability => "scalability_error",
            ErrorClass::Io => "io_error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
