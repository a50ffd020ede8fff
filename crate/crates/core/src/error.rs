use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid derivative order {k}: must lie in 1..={max_order}")]
    InvalidOrder { k: usize, max_order: usize },

    #[error("incomplete flow state: no value for derivative order {order}")]
    IncompleteState { order: usize },

    #[error("order {k} exceeds the differentiability order n_max = {n_max} of the coefficients")]
    InsufficientSmoothness { k: usize, n_max: usize },

    #[error("unknown coefficient family `{0}`")]
    UnknownFamily(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("non-finite quadrature result ({what}); nodes/weights: {diagnostics}")]
    NumericalFailure { what: String, diagnostics: String },

    #[error("invalid exponent p = {p}: must be >= {min}")]
    InvalidExponent { p: f64, min: f64 },

    #[error("{what} overflows double range (ln value {ln_value})")]
    Overflow { what: String, ln_value: f64 },

    #[error("invalid moment statistics: {0}")]
    InvalidStats(String),

    #[error("invalid coefficient norms: {0}")]
    InvalidNorms(String),

    #[error("invalid domination: {0}")]
    InvalidDomination(String),

    #[error("non-finite flow state at t = {t}: {state:?}")]
    BlowUp { t: f64, state: Vec<f64> },

    #[error("path {path_index} (master seed {master_seed}) failed: {source}")]
    PathFailure {
        path_index: u64,
        master_seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("coefficient norms cannot be derived for this model: {0}")]
    NormsUnavailable(String),

    #[error("invalid payoff: {0}")]
    InvalidPayoff(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
