use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network architecture: {0}")]
    Architecture(String),
    #[error("parameter vector has length {got}, architecture expects {expected}")]
    ParameterLength { expected: usize, got: usize },
    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },
    #[error("invalid loss graph: {0}")]
    Graph(String),
    #[error("value {value} outside domain: {what}")]
    Domain { what: &'static str, value: f64 },
    #[error("non-finite gradient at coordinate {index}")]
    NonFiniteGradient { index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("malformed data in {path}: {reason}")]
    Format { path: String, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
