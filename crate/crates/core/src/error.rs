use crate::network::Violation;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Arguments of the part metric must both be positive definite.
    #[error("not parts: {0}")]
    NotParts(String),

    #[error("numerical failure in {context} (condition estimate {condition:.3e})")]
    Numerical { context: String, condition: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid network: {}", format_violations(.0))]
    InvalidNetwork(Vec<Violation>),

    #[error("internal invariant breached: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

pub type Result<T> = std::result::Result<T, Error>;
