use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step index {t} outside [1, {max}]")]
    StepOutOfRange { t: usize, max: usize },

    #[error("invalid step pair: t = {t}, t_prev = {t_prev}")]
    InvalidStepPair { t: usize, t_prev: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at step {step} (last finite loss {last_finite:?})")]
    NonFiniteLoss { step: usize, last_finite: Option<f64> },

    #[error("unknown class {class} (model has {n_classes} classes)")]
    UnknownClass { class: usize, n_classes: usize },

    #[error("guidance rule `{0}` needs a noisy classifier but none was supplied")]
    MissingClassifier(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
