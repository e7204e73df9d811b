//! Error taxonomy shared by every module.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation received a parameter outside its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A probability or other scalar argument fell outside the documented range.
    #[error("domain error: {what} = {value} is outside {range}")]
    Domain {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    /// Adaptive quadrature could not reach the requested tolerance.
    /// Carries the worst remaining panel so failures are diagnosable.
    #[error(
        "quadrature failed in {context}: worst panel [{panel_lo}, {panel_hi}] error {panel_err:e} (tolerance {tol:e})"
    )]
    NumericFailure {
        context: String,
        panel_lo: f64,
        panel_hi: f64,
        panel_err: f64,
        tol: f64,
    },

    /// Calibration cannot meet the requested budgets.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The discrete-policy oracle cannot realize the requested transmission
    /// probability as a sum of state probabilities; reports the closest sums.
    #[error("transmit probability {requested} not realizable; nearest achievable: {nearest:?}")]
    InfeasibleTarget { requested: f64, nearest: Vec<f64> },

    /// Root bracketing or iteration failed.
    #[error("root finding failed in {context}: {detail}")]
    RootFailure { context: String, detail: String },

    /// Experiment-spec file problems, with the offending line or field.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
