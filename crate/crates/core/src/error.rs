use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value from {what} at {point}")]
    NonFinite { what: &'static str, point: String },

    #[error("intensity {value} exceeds mark bound {bound} at t={t}, particle {particle}")]
    IntensityExceedsBound { value: f64, bound: f64, t: f64, particle: usize },

    #[error("{what} query at {value} outside [{lo}, {hi}]")]
    OutOfRange { what: &'static str, value: f64, lo: f64, hi: f64 },

    #[error("mass drifted to {mass} at t={t} (tolerance {tol})")]
    MassViolation { mass: f64, t: f64, tol: f64 },

    #[error("negative density {value} at t={t}, s={s}")]
    NegativeDensity { value: f64, t: f64, s: f64 },

    #[error("assumption {name} fails: {detail}")]
    AssumptionFailed { name: &'static str, detail: String },

    #[error("not enough resolved points for a slope fit: {have} usable, need {need}")]
    InsufficientResolution { have: usize, need: usize },

    #[error("fixed-point iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("malformed run file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(what: &'static str, x: f64, point: impl FnOnce() -> String) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite { what, point: point() })
    }
}
