use thiserror::Error;

/// Unified error type for the whole crate.
#[derive(Error, Debug)]
pub enum Error {
    /// Invalid parameters or configuration (caught before any computation).
    #[error("config: {0}")]
    Config(String),

    /// Out-of-range site, bond, or window request.
    #[error("index: {0}")]
    Index(String),

    /// Numerical routine failed (eigensolver residual, singular solve, ...).
    #[error("numerical: {0}")]
    Numerical(String),

    /// Integrator violated its drift or stability contract.
    #[error("integration: {0}")]
    Integration(String),

    /// Monte Carlo sampler failed its diagnostics.
    #[error("sampling: {0}")]
    Sampling(String),

    /// Statistical estimate unusable (empty fit window, degenerate data, ...).
    #[error("estimation: {0}")]
    Estimation(String),

    /// A caller broke a documented precondition of a physics routine.
    #[error("contract: {0}")]
    Contract(String),

    /// Problem size exceeds a hard resource cap.
    #[error("resource: {0}")]
    Resource(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Stable lowercase tag naming the error class, for machine-readable
    /// error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Index(_) => "index",
            Error::Numerical(_) => "numerical",
            Error::Integration(_) => "integration",
            Error::Sampling(_) => "sampling",
            Error::Estimation(_) => "estimation",
            Error::Contract(_) => "contract",
            Error::Resource(_) => "resource",
            Error::Io(_) => "io",
        }
    }
}
