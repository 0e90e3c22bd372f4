use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("admissibility error: {0}")]
    Admissibility(String),
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },
    #[error("column {column}: {source}")]
    Column {
        column: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("trace extraction error: {0}")]
    Trace(String),
    #[error("underflow: {0}")]
    Underflow(String),
    #[error("chain construction error: {0}")]
    Chain(String),
    #[error("calibration failure: {0}")]
    Calibration(String),
    #[error("construction error: {0}")]
    Construction(String),
    #[error("eigenvalue collision: {0}")]
    EigenvalueCollision(String),
    #[error("discretization alarm: {0}")]
    Discretization(String),
    #[error("listing error: {0}")]
    Listing(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn in_column(self, column: usize) -> Self {
        Error::Column {
            column,
            source: Box::new(self),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
