//! Error types shared across the toolkit.

use thiserror::Error;

/// Errors produced by pulse construction, simulation, fitting, and the
/// calibration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or precondition check rejected an input value.
    #[error("invalid {field}: {reason}")]
    Validation { field: &'static str, reason: String },

    /// A calibration stage failed; the stage label identifies where.
    #[error("calibration failed at {stage}: {reason}")]
    Calibration { stage: &'static str, reason: String },

    /// A nonlinear fit did not converge within the iteration cap. Carries
    /// the best parameter vector found and its weighted residual.
    #[error("fit did not converge after {iterations} iterations (chi2 {chi2:.6e})")]
    FitNonConvergence {
        iterations: usize,
        chi2: f64,
        best: Vec<f64>,
    },

    /// The decay data contain no signal above the fixed asymptote.
    #[error("no decay signal: all populations consistent with the 0.25 asymptote")]
    NoDecaySignal,

    /// A linear-algebra operation hit a singular or ill-conditioned matrix.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Reading or parsing an external file failed.
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn validation(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation {
            field,
            reason: reason.into(),
        }
    }

    pub fn calibration(stage: &'static str, reason: impl Into<String>) -> Self {
        Error::Calibration {
            stage,
            reason: reason.into(),
        }
    }
}
