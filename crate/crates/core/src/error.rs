use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value for {0}")]
    NonFinite(&'static str),

    #[error("matrix is not a rigid SE(2) transform: {0}")]
    InvalidTransform(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("could not place object {placed} of {requested} without overlap after {retries} retries")]
    InfeasibleScene {
        placed: usize,
        requested: usize,
        retries: usize,
    },

    #[error("unknown agent id {0}")]
    UnknownAgent(u32),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("invalid timestep {t} (schedule length {len}): {reason}")]
    InvalidTimestep { t: usize, len: usize, reason: &'static str },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("normal equations singular after {iterations} iterations (damping {damping:e}, cost {cost:e})")]
    SingularSystem { iterations: usize, damping: f64, cost: f64 },

    #[error("invalid pose graph: {0}")]
    InvalidGraph(String),

    #[error("trial seed {seed}: {source}")]
    Trial {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by user-supplied configuration rather than runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::InvalidConfig { .. } | Error::ConfigParse(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
