use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument is outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// The computation would exceed the configured budget.
    #[error("resource limit: {0}")]
    Resource(String),
    /// Inconsistent or missing configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// The project does not qualify for the requested measurement.
    #[error("ineligible project: {0}")]
    Ineligible(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
