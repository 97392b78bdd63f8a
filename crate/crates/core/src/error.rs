use thiserror::Error;

/// Errors raised by the estimation, asymptotics and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown identifier `{0}`")]
    UnknownId(String),

    #[error("moment matrix is numerically singular (condition number {condition:.3e})")]
    SingularMoments { condition: f64 },

    #[error("{0} is not available for this covariance model")]
    NotAvailable(String),

    #[error("covariance matrix is not positive semidefinite (largest jitter {jitter:e} failed)")]
    NotPsd { jitter: f64 },

    #[error("sampling density is not positive at x = {x}")]
    BadDensity { x: f64 },

    #[error("derivative m^({order}) vanishes at x = {x}")]
    VanishingDerivative { order: usize, x: f64 },

    #[error("p - nu = {0} is odd: no bias-optimal density exists")]
    WrongParity(usize),

    #[error("normal matrix is rank deficient (condition number {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("bandwidth too small: {in_window} points in window, need {needed}")]
    BandwidthTooSmall { in_window: usize, needed: usize },

    #[error("fit failed at x = {x}: {source}")]
    AtPoint {
        x: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("required derivative vanishes at x = {0}")]
    ZeroCurvature(f64),

    #[error("alpha(x) = 0: use the regular-covariance bandwidth")]
    AlphaZero,

    #[error("g_(p,0)(x) = 0: the sampling density is bias-optimal, a higher order expansion is needed")]
    OptimalDensityInUse,

    #[error("mean squared error cannot be optimized: {0}")]
    NotOptimizable(String),

    #[error("no feasible bandwidth candidate")]
    AllCandidatesInfeasible,

    #[error("asymptotic normality condition violated: n*h^{exponent} = {value:.4}")]
    ConditionViolated { exponent: i32, value: f64 },

    #[error("{failed} of {total} replications failed (first: {first})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("I/O error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
