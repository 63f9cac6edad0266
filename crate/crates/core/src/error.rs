use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("coupling construction error: {0}")]
    Construction(String),
    #[error("certification failed: {0}")]
    Certification(String),
    #[error("drift certification failed: slope estimate {slope} (upper bound {upper}) is not below 1")]
    Drift { slope: f64, upper: f64 },
    #[error("LP budget exceeded: {atoms} atoms, budget {budget}")]
    Budget { atoms: usize, budget: usize },
    #[error("solver error: {0}")]
    Solver(String),
    #[error("truncation error: tail bound {tail:e} exceeds tolerance {tol:e} at N = {n}")]
    Truncation { tail: f64, tol: f64, n: usize },
    #[error("path construction error: {0}")]
    Path(String),
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error("non-convergence: {0}")]
    NonConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
