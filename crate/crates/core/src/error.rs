use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlateError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid perception method {id}: {reason}")]
    InvalidMethod { id: usize, reason: String },

    #[error("duration {0} s is not a non-negative multiple of the sampling period")]
    OffGrid(f64),

    #[error("innovation covariance is singular (condition number {0:e})")]
    SingularUpdate(f64),

    #[error("covariance lost positive semi-definiteness (min eigenvalue {min_eig:e}, norm {norm:e})")]
    NotPsd { min_eig: f64, norm: f64 },

    #[error("schedule covers only {covered} of {window} ticks")]
    IncompleteSchedule { covered: u64, window: u64 },

    #[error("unknown perception method id {0}")]
    UnknownMethod(usize),

    #[error("exact scheduler would recurse {depth} levels (cap {cap}); use the quantized scheduler instead")]
    ExplosionGuard { depth: u64, cap: u64 },

    #[error("covariance graph is empty")]
    EmptyGraph,

    #[error("graph expansion exceeded {limit} nodes (started from {initial})")]
    GraphExplosion { limit: usize, initial: usize },

    #[error("node {0} is not in the graph")]
    UnknownNode(usize),

    #[error("no path reaches the end of the window")]
    Unreachable,

    #[error("certificate is not feasible (margin {0:e})")]
    InfeasibleCertificate(f64),

    #[error("malformed certificate: {0}")]
    MalformedCertificate(String),

    #[error("trace is incomplete: {0}")]
    IncompleteTrace(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PlateError {
    /// Errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PlateError::InvalidModel(_)
                | PlateError::InvalidMethod { .. }
                | PlateError::OffGrid(_)
                | PlateError::Config { .. }
                | PlateError::Dimension(_)
                | PlateError::MalformedCertificate(_)
                | PlateError::UnknownMethod(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, PlateError>;
