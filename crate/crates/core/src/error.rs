use thiserror::Error;

/// Errors produced by the simulator and its helpers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a model function.
    #[error("domain error: {0}")]
    Domain(String),
    /// Inconsistent or invalid configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Invalid geometry dimensions.
    #[error("geometry error: {0}")]
    Geometry(String),
    /// A numerical procedure failed (non-finite values, solver breakdown).
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Parameter fitting could not produce a result.
    #[error("fit error: {0}")]
    Fit(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
