use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A root finder or bracket did not behave as the construction requires.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An iterative solver hit its cap. `best` carries the best objective seen.
    #[error("no convergence after {iterations} iterations (best value {best}, residual {residual})")]
    Convergence {
        iterations: usize,
        best: f64,
        residual: f64,
    },

    /// Inputs were internally inconsistent (a precondition was violated upstream).
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Free-time search bracket does not contain a minimum.
    #[error("bracket error: {0}")]
    Bracket(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
