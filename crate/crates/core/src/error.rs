use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("curve parameters produce a non-positive error at this data scale: {0}")]
    InvalidCurveRange(String),

    #[error("not enough fit samples: {0}")]
    InsufficientData(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("average local error {0} >= 1, training does not converge")]
    DivergentTraining(f64),

    #[error("frequency {freq} exceeds device maximum {max_freq}")]
    FrequencyExceeded { freq: f64, max_freq: f64 },

    #[error("invalid CPU frequency {0}")]
    InvalidFrequency(f64),

    #[error("uplink rate is zero, server unreachable")]
    UnreachableServer,

    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("error budget {budget} outside feasible range [{lower}, {upper}]")]
    InfeasibleBudget { budget: f64, lower: f64, upper: f64 },

    #[error("minimum bandwidths sum to {required} Hz but only {available} Hz is available (shortfall {shortfall} Hz)")]
    InfeasibleBandwidth {
        required: f64,
        available: f64,
        shortfall: f64,
    },

    #[error("device {device} cannot finish within the round deadline: {reason}")]
    DeviceInfeasible { device: usize, reason: String },

    #[error("bisection did not converge within {0} iterations")]
    BisectionStalled(usize),

    #[error("no feasible time split found for {0} consecutive iterations")]
    NoFeasibleRegion(usize),

    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    #[error("policy infeasible: {0}")]
    PolicyInfeasible(String),

    #[error("degenerate gradient: {0}")]
    DegenerateGradient(String),

    #[error("{0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
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
        Error::Io(e.to_string())
    }
}
