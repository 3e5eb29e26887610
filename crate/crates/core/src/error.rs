use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The prior yields identical posteriors for both bit values, so no
    /// scoring rule can separate truthful from untruthful reports.
    #[error("degenerate prior: p0 = p1 = {p}")]
    DegeneratePrior { p: f64 },

    #[error("alpha = {alpha} must be below |p1 - p0| / 2 = {limit}")]
    AlphaTooLarge { alpha: f64, limit: f64 },

    #[error("cost quantile not reached within search cap {cap}")]
    UnboundedQuantile { cap: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("index {index} out of range for {len} agents")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("expected {expected} reports, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn ensure_probability(name: &'static str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{x} is not in [0, 1]")))
    }
}

pub(crate) fn ensure_open_unit(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{x} is not in (0, 1)")))
    }
}

pub(crate) fn ensure_positive(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && !x.is_nan() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{x} must be positive")))
    }
}
