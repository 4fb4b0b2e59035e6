use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty shape")]
    EmptyShape,

    #[error("invalid intensity spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("hull search too large: {0}")]
    HullTooLarge(String),

    #[error("threshold undefined at level {0}")]
    ThresholdUndefined(u32),

    #[error("divergent sum: {0}")]
    Divergent(String),

    #[error("enumeration cap exceeded: {0}")]
    CapExceeded(String),

    #[error("infinite enumeration requested with zero error budget")]
    ZeroBudget,

    #[error("insufficient conditional sample: {hits} hits, need {needed}")]
    InsufficientSample { hits: usize, needed: usize },

    #[error("partition margin too small: {0}")]
    MarginTooSmall(String),

    #[error("cap too small: every run was censored at t = {0}")]
    AllCensored(u64),

    #[error("state space not countable-friendly: {0}")]
    NotCountable(String),

    /// A runtime invariant failed. These indicate a formula or coupling bug,
    /// never bad input.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("site lists differ")]
    SiteMismatch,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn is_invariant(&self) -> bool {
        matches!(self, Error::Invariant(_))
    }
}
