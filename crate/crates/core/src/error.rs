use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("non-finite value at iterate {iterate} of the state map")]
    NumericOverflow { iterate: usize },

    #[error("non-finite value while evaluating at x = {state:?}: {what}")]
    EvaluationOverflow { state: Vec<f64>, what: String },

    #[error("complex eigenvalue {re}{im:+}i has no conjugate partner")]
    ConjugatePair { re: f64, im: f64 },

    #[error("empty eigenvalue list")]
    EmptyEigenvalues,

    #[error("sampling period {dt} violates the stability bound dt < 2V/F = {bound}")]
    StabilityBound { dt: f64, bound: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),

    #[error("unbound name `{0}`")]
    Unbound(String),

    #[error("{0}")]
    Format(String),
}
