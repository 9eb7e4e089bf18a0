use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("design matrix is rank deficient (collinear columns)")]
    RankDeficient,
    #[error("non-finite value in input: {0}")]
    NonFiniteInput(&'static str),
    #[error("negative Hessian of the log-posterior is not positive definite")]
    HessianNotPd,
    #[error("stochastic fit diverged to a non-finite iterate at step {0}")]
    DivergedNonFinite(usize),
    #[error("unknown transform id {0}")]
    UnknownTransform(usize),
    #[error("feature generation exhausted {0} attempts without a valid candidate")]
    GenerationExhausted(usize),
    #[error("every model in the ledger has log marginal likelihood -inf")]
    AllModelsInvalid,
    #[error("no stored fit for model key {0}")]
    MissingFit(String),
    #[error("runs were produced from different datasets and cannot be merged")]
    IncompatibleRuns,
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: String, msg: String },
    #[error("column {0} not found in header")]
    MissingColumn(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
