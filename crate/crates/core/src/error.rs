use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EtdError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular resolvent at quadrature node {node}")]
    SingularResolvent { node: usize },
    #[error("non-finite state produced at step {step}")]
    Divergence { step: usize },
    #[error("observation time {time} does not fall on the time grid")]
    Alignment { time: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, EtdError>;
