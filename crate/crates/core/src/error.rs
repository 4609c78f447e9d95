use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("graph is disconnected")]
    Disconnected,

    #[error("unknown edge ({0}, {1})")]
    UnknownEdge(usize, usize),

    #[error("event at t = {time} arrives after t = {previous}")]
    NonMonotoneEvents { time: f64, previous: f64 },

    #[error("history read at t = {read} is below the prune horizon t = {horizon}")]
    HistoryUnderrun { read: f64, horizon: f64 },

    #[error("conjugate gradient oracle did not converge after {iterations} Newton steps (residual {residual:e})")]
    ConjugateOracle { iterations: usize, residual: f64 },

    #[error("delay-linearized system is not certified stable (rho = {0})")]
    NotStable(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
