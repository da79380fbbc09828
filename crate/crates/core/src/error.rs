use thiserror::Error;

/// Errors raised by the model, the pipeline and the configuration loader.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("singular dispersive shift: detuning {delta_qc_hz} Hz coincides with a pole (0 or anharmonicity)")]
    DegenerateDetuning { delta_qc_hz: f64 },

    #[error("state-space model is unstable: eigenvalue with real part {max_real_part:e} >= 0")]
    UnstableModel { max_real_part: f64 },

    #[error("singular matrix in {context}")]
    SingularMatrix { context: &'static str },

    #[error("numerical solve did not converge: {0}")]
    NonConvergence(String),

    #[error("time step {dt:e} s exceeds the limit {limit:e} s required by {context}")]
    StepTooLarge {
        dt: f64,
        limit: f64,
        context: &'static str,
    },

    #[error("mean traces are identical; the matched filter is degenerate")]
    DegenerateFilter,

    #[error("trace mismatch: {0}")]
    TraceMismatch(String),

    #[error("empty histogram")]
    EmptyHistogram,

    #[error("need at least {needed} calibration points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("calibration fit failed ({what}): R² = {r_squared:.6}, residuals {residuals:?}")]
    FitQuality {
        what: &'static str,
        r_squared: f64,
        residuals: Vec<f64>,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and > 0, got {value}")))
    }
}

pub(crate) fn ensure_non_negative(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and >= 0, got {value}")))
    }
}
