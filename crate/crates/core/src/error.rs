use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the function (non-finite input,
    /// non-positive parameter, pole of a special function).
    #[error("domain error: {0}")]
    Domain(String),

    /// A model specification that violates its invariants.
    #[error("invalid model: {0}")]
    Model(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The total jump rate of a configuration underflowed to zero.
    #[error("simulation stalled at t = {time}: total rate {rate}")]
    Stall { time: f64, rate: f64 },

    #[error("trajectory covers [0, {covered}] but t = {requested} was requested")]
    Coverage { covered: f64, requested: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("distribution is not normalizable: {0}")]
    NonNormalizable(String),

    #[error("root solver failed: {0}")]
    Solver(String),

    #[error("quadrature did not converge: estimate {value}, achieved error {achieved}, requested {requested}")]
    Quadrature {
        value: f64,
        achieved: f64,
        requested: f64,
    },

    #[error("horizon too large: {0}")]
    Horizon(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("time step {dt} exceeds stability budget {budget}")]
    StepSize { dt: f64, budget: f64 },

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
