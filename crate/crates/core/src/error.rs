use thiserror::Error;

/// Errors raised by models, the LLR engine, procedures and the experiment runner.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The two densities of a stream cannot be told apart (zero or infinite divergence).
    #[error("degenerate stream model: {0}")]
    DegenerateModel(String),

    /// A model's parameters violate its construction rules.
    #[error("invalid stream model: {0}")]
    InvalidModel(String),

    /// A procedure tried to sample a stream that had already been decided.
    #[error("stream {stream} was sampled after it had been decided")]
    SampledInactiveStream { stream: usize },

    /// A stream used up its sample cap without leaving the continuation region.
    #[error("stream {stream} hit the sample cap of {cap} without a decision")]
    HorizonExceeded { stream: usize, cap: u64 },

    /// Arguments outside the domain of a closed-form computation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent thresholds or procedure parameters.
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),

    /// An experiment configuration failed validation.
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    /// A single Monte Carlo trial failed.
    #[error("procedure {procedure}, sweep point {sweep_index}, trial {trial}: {source}")]
    TrialFailed {
        procedure: String,
        sweep_index: usize,
        trial: u64,
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
