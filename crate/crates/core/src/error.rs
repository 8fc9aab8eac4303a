use thiserror::Error;

/// Errors raised by the solvers, the FL simulator and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("root not bracketed on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    Bracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: String, iterations: usize },

    #[error("infeasible: {reason}{}", t_star.map(|t| format!(" (minimum completion time {t:.6e} s)")).unwrap_or_default())]
    Infeasible { reason: String, t_star: Option<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("global loss increased for {rounds} consecutive rounds (xi = {xi})")]
    Divergence { rounds: usize, xi: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Row and column are zero-based file positions.
    #[error("data error at row {row}, column {column}: {message}")]
    Data { row: usize, column: usize, message: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn infeasible(reason: impl Into<String>) -> Self {
        Error::Infeasible {
            reason: reason.into(),
            t_star: None,
        }
    }

    /// Wraps the error with a description of what was being attempted.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True when the error (or the error it wraps) is an infeasibility signal.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Infeasible { .. } => true,
            Error::Context { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }

    /// Minimum completion time attached to an infeasibility error, if any.
    pub fn t_star(&self) -> Option<f64> {
        match self {
            Error::Infeasible { t_star, .. } => *t_star,
            Error::Context { source, .. } => source.t_star(),
            _ => None,
        }
    }
}
