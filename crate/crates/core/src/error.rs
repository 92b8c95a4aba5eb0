use thiserror::Error;

/// Errors raised anywhere in the engine, planner, estimators or solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced at node {node}")]
    NonFinite { node: usize },

    #[error("output is not scalar (length {0})")]
    NonScalarOutput(usize),

    #[error("derivative order {order} exceeds the supported maximum {max}")]
    OrderTooHigh { order: usize, max: usize },

    #[error("{primitive} is undefined at {x}")]
    Domain { primitive: &'static str, x: f64 },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("invalid operator: {0}")]
    Operator(String),

    #[error("no jet plan for {target} within order cap {cap}")]
    NoPlan { target: String, cap: usize },

    #[error("unsupported estimator: {0}")]
    Unsupported(String),

    #[error(
        "impossible to construct dense STDE for a diagonal operator of order {order}: \
         isotropic random jets cannot separate diagonal from mixed derivatives"
    )]
    DenseImpossible { order: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("finite-difference oracle: {0}")]
    Oracle(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
