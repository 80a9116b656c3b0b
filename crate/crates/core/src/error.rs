use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("density is numerically singular at frequency index {index} (lambda = {lambda}, min eigenvalue {min_eigenvalue:e})")]
    SingularDensity {
        index: usize,
        lambda: f64,
        min_eigenvalue: f64,
    },

    #[error("ill-conditioned system: condition number {condition_number:e}")]
    IllConditioned { condition_number: f64 },

    #[error("operator and spectral forms of the error disagree: {operator_form} vs {spectral_form}")]
    DualFormMismatch {
        operator_form: f64,
        spectral_form: f64,
    },

    #[error("sample time {0} lies inside the missing set")]
    SampleInsideMissingSet(f64),

    #[error("class is infeasible: {0}")]
    InfeasibleClass(String),

    #[error("class kind {0} is not supported by the linear maximizer")]
    UnsupportedClass(String),

    #[error("density is not a member of its class: {0}")]
    NotMember(String),

    #[error("saddle iteration stalled after {iterations} iterations (best gap {best_gap:e})")]
    Stalled { iterations: usize, best_gap: f64 },

    #[error("minimality lost at iteration {iteration}: {reason}")]
    MinimalityLost { iteration: usize, reason: String },

    #[error("model error: {0}")]
    Model(String),

    #[error("cache error: {0}")]
    Cache(String),
}

impl Error {
    /// Failures of the numerics itself, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularDensity { .. }
                | Error::IllConditioned { .. }
                | Error::DualFormMismatch { .. }
                | Error::Stalled { .. }
                | Error::MinimalityLost { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
