//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A model parameter violates its admissibility constraint.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// An operation was called outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A liquidity-taking buy was suppressed because the pool holds too few
    /// units of the risky asset (Y ≤ ξ).
    #[error("trade rejected: pool holds {y} ETH, buy of {xi} ETH suppressed")]
    TradeRejected { y: f64, xi: f64 },

    /// The backward Riccati integration produced a non-finite coefficient.
    /// `t` is the earliest failing time encountered from the horizon down.
    #[error("riccati blow-up at t = {t}: coefficient {coefficient} is not finite")]
    BlowUp { t: f64, coefficient: &'static str },

    /// A simulation or solver configuration cannot be run as requested.
    #[error("config error: {0}")]
    Config(String),

    /// The intensity fit cannot be performed on the given buckets.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Malformed input data (CSV schema, config file syntax, ...).
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
