use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in column {column} (row {row})")]
    NonFinite { row: usize, column: usize },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("stratum {stratum} has {size} observations, fewer than the {needed} splits")]
    SmallStratum {
        stratum: usize,
        size: usize,
        needed: usize,
    },

    #[error("grid does not cover the padded data range: {0}")]
    GridCoverage(String),

    #[error("schedule invalid: {0}")]
    Schedule(String),

    #[error("non-finite objective or gradient at iteration {0}")]
    Diverged(usize),

    #[error("objective increased at iteration {iter}: {before} -> {after}")]
    ObjectiveIncrease { iter: usize, before: f64, after: f64 },

    #[error("line search failed: {0}")]
    LineSearch(String),

    #[error("iteration limit {limit} reached (residual {residual:e})")]
    NoConvergence { limit: usize, residual: f64 },

    #[error("infeasible parameter: {0}")]
    Infeasible(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
