use thiserror::Error;

/// Errors raised by the model, the exact oracles and the dynamics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("kernel is not ergodic: {0}")]
    NonErgodicKernel(String),
    #[error("row {row} has no finite exponent and cannot be normalized")]
    NonNormalizable { row: usize },
    #[error("matrix is not row-stochastic: {0}")]
    NotStochastic(String),
    #[error("chain is not reversible (detailed-balance residual {residual:e})")]
    NotReversible { residual: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("{what} needs {size} states, above the guard of {guard}")]
    TooLarge {
        what: &'static str,
        size: f64,
        guard: usize,
    },
    #[error("boundary condition has zero probability")]
    ZeroProbabilityBoundary,
    #[error("ratio recursion denominator vanished")]
    DegenerateDenominator,
    #[error("configuration is inconsistent with the boundary: {0}")]
    InconsistentBoundary(String),
    #[error("operation requires the proper-coloring kernel")]
    NotColoringModel,
    #[error("no configuration of the component lies in the good set")]
    EmptyGoodSet,
    #[error("chain is not ergodic (spectral gap {gap:e})")]
    NonErgodicChain { gap: f64 },
    #[error("function takes a negative value at state {index}")]
    NegativeFunction { index: usize },
    #[error("precondition not met: {0}")]
    PreconditionNotMet(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("output failed: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn too_large(what: &'static str, size: f64, guard: usize) -> Self {
        Error::TooLarge { what, size, guard }
    }
}
