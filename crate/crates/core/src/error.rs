use thiserror::Error;

/// Errors raised by the simulation, rough-path and statistics layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("insufficient derivatives: need {needed}, family provides {available}")]
    InsufficientDerivatives { needed: usize, available: usize },

    #[error("derivative order {order} is not defined for p = {p}")]
    Order { order: usize, p: f64 },

    #[error("cholesky factorization failed at row {0}")]
    Cholesky(usize),

    #[error("solution blew up (|y| = {value:e}) at step {step}")]
    BlowUp { step: usize, value: f64 },

    #[error("regime error: {0}")]
    Regime(String),

    #[error("degenerate statistics: {0}")]
    Degenerate(String),

    #[error("insufficient replicas: {got} < {needed}")]
    InsufficientReplicas { got: usize, needed: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_hurst(hurst: f64) -> Result<()> {
    if hurst > 0.0 && hurst < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("hurst must lie in (0, 1), got {hurst}")))
    }
}
