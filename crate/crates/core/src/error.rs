use std::path::PathBuf;

/// Errors raised across the sampler, the FIM estimators and the experiment driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("parameter outside model domain: {0}")]
    Domain(String),

    #[error("observation outside model support: {0}")]
    Support(String),

    #[error("Fisher information matrix is singular or not positive definite: {0}")]
    SingularFim(String),

    #[error("perturbation left the model domain on all {attempts} redraws")]
    DomainExhausted { attempts: usize },

    #[error("particle filter degenerated at t = {t}: all weights underflowed")]
    DegenerateFilter { t: usize },

    #[error("particle smoother degenerated at t = {t}: zero predictive denominator")]
    DegenerateSmoother { t: usize },

    #[error("FIM estimation failed: {dropped} of {total} replicate runs dropped")]
    EstimationFailed { dropped: usize, total: usize },

    #[error("potential evaluation failed at the initial state: {0}")]
    Initialization(Box<Error>),

    #[error("operation not supported by this model: {0}")]
    Unsupported(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("validation failed: {0}")]
    Validation(String),
}

impl Error {
    /// Short stable name of the variant, used in CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::ContractViolation(_) => "ContractViolation",
            Error::Domain(_) => "DomainError",
            Error::Support(_) => "SupportError",
            Error::SingularFim(_) => "SingularFimError",
            Error::DomainExhausted { .. } => "DomainExhaustedError",
            Error::DegenerateFilter { .. } => "DegenerateFilterError",
            Error::DegenerateSmoother { .. } => "DegenerateSmootherError",
            Error::EstimationFailed { .. } => "EstimationFailedError",
            Error::Initialization(_) => "InitializationError",
            Error::Unsupported(_) => "Unsupported",
            Error::Config(_) => "ConfigError",
            Error::Io { .. } => "IoError",
            Error::Validation(_) => "ValidationError",
        }
    }

    /// Errors that make a single proposal unusable but leave the chain intact.
    pub fn is_proposal_rejection(&self) -> bool {
        matches!(
            self,
            Error::SingularFim(_)
                | Error::DomainExhausted { .. }
                | Error::Domain(_)
                | Error::DegenerateFilter { .. }
                | Error::DegenerateSmoother { .. }
                | Error::EstimationFailed { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::ContractViolation(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
