use thiserror::Error;

use crate::model::Configuration;

pub type Result<T, E = ArwError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ArwError {
    #[error("illegal toppling at site {site}: {reason}")]
    IllegalToppling { site: i64, reason: &'static str },

    /// The toppling cap was hit before the configuration became stable.
    /// `partial` is the configuration at the moment the cap was reached.
    #[error("toppling budget of {limit} exceeded")]
    BudgetExceeded {
        limit: u64,
        partial: Box<Configuration>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("instruction stack at site {site} exhausted at index {index}")]
    StackExhausted { site: i64, index: u64 },

    #[error("insufficient range: need L(m_max) >= {needed}, have {available}")]
    InsufficientRange { needed: u64, available: u64 },

    #[error("inconclusive: bracket [{lo}, {hi}] could not be narrowed beyond noise")]
    Inconclusive { lo: f64, hi: f64 },

    #[error("moment overflow at alpha = {alpha}")]
    MomentOverflow { alpha: f64 },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl ArwError {
    pub fn domain(msg: impl Into<String>) -> Self {
        ArwError::Domain(msg.into())
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ArwError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
