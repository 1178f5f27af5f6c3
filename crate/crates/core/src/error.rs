use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("branching degree m = {0} is not supported (need m >= 3)")]
    Degree(u32),

    #[error("tree with m = {m}, n = {n} has too many vertices to index")]
    TreeTooLarge { m: u32, n: u32 },

    #[error("vertex index {index} out of range for a tree with {len} vertices")]
    InvalidVertex { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("N = {n} exceeds the configured dense-matrix cap of {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("matrix is not positive definite (pivot {pivot} failed)")]
    NotPositiveDefinite { pivot: usize },

    #[error("jitter exceeded cap: factorization still failing at eps = {eps:e}")]
    JitterExceeded { eps: f64 },

    #[error("walk exceeded the step budget of {budget} steps")]
    StepBudget { budget: u64 },

    #[error("tolerance {tol:e} not reached within {cap} terms")]
    Truncation { tol: f64, cap: usize },

    #[error("regime error: C1(m)/m = {ratio} >= 1, the bound requires large m")]
    Regime { ratio: f64 },

    #[error("law mismatch: {0}")]
    LawMismatch(String),

    #[error("internal numerical error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
