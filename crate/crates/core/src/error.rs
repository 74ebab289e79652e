//! Error type shared by every module of the engine.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A distribution parameter is outside its domain (non-finite, wrong sign).
    #[error("parameter domain: {0}")]
    ParamDomain(String),

    /// Linear-algebra failure (non-SPD precision, singular solve) naming the block.
    #[error("numerical failure in {block}: {detail}")]
    Numerical { block: String, detail: String },

    /// Sampling weights collapsed to zero or contain non-finite entries.
    #[error("degenerate sampling weights for {0}")]
    DegenerateWeights(String),

    /// A category code is outside 1..=K.
    #[error("category domain: {0}")]
    CategoryDomain(String),

    /// Vector/matrix dimensions do not match.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Dataset validation failed; one line per violation with unit coordinates.
    #[error("invalid dataset ({} violation(s)):\n{}", violations.len(), violations.join("\n"))]
    InvalidData { violations: Vec<String> },

    /// Bad run or scenario configuration.
    #[error("configuration: {0}")]
    Config(String),

    /// An operation needed posterior draws but the chain output is empty.
    #[error("empty chain output")]
    EmptyChain,

    /// A relative metric was requested against a zero truth value.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A Gibbs update failed mid-run; carries the sweep index.
    #[error("chain failed at iteration {iteration}: {source}")]
    ChainFailure {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Error {
        Error::ChainFailure {
            iteration,
            source: Box::new(self),
        }
    }
}
