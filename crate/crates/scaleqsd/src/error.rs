//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid: {0}")]
    Grid(String),

    #[error("measure: {0}")]
    Measure(String),

    #[error("kernel: {0}")]
    Kernel(String),

    #[error("catalog: {0}")]
    Catalog(String),

    #[error("expression: {0}")]
    Expr(String),

    #[error("solver: {0}")]
    Solver(String),

    /// A ratio denominator sat below the pole threshold; for negative `q`
    /// this signals `q <= -lambda_0` on the interval in question.
    #[error("pole: {0}")]
    Pole(String),

    #[error("no sign change for {target} in ({lo}, {hi}]")]
    NoRootInRange { target: String, lo: f64, hi: f64 },

    #[error("inconclusive boundary classification: {0}")]
    Inconclusive(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("monte carlo: {0}")]
    MonteCarlo(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code contract: 0 success, 2 invariant failure,
    /// 3 inconclusive classification, 4 config error, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 2,
            Error::Inconclusive(_) => 3,
            Error::Config(_) | Error::Expr(_) => 4,
            _ => 1,
        }
    }
}
