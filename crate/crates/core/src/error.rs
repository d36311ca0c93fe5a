use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix of order {order} is not positive definite")]
    NotPositiveDefinite { order: usize },

    #[error("ill-conditioned Jacobian (reciprocal condition {rcond:e})")]
    IllConditioned { rcond: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("outside function domain: {0}")]
    Domain(String),

    #[error("fit failed at iteration {iteration}: {source}")]
    Fit {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("chain file: {0}")]
    ChainFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Error {
        match self {
            e @ Error::Fit { .. } => e,
            e => Error::Fit {
                iteration,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
