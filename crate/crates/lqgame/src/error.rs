use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix fails the {0} check")]
    Definiteness(&'static str),
    #[error("designated Schur block is singular")]
    SingularBlock,
    #[error("concavity violated: R^a - E[B^a' P B^a] is not positive definite (min eig {min_eig:.3e})")]
    ConcavityViolated { min_eig: f64 },
    #[error("Phi(P;k) is singular")]
    SingularPhi,
    #[error("zero controller gain realization")]
    ZeroGain,
    #[error("spectral radius {rho} is not below 1")]
    SpectralRadiusTooLarge { rho: f64 },
    #[error("iteration did not converge after {iters} steps (last change {change:.3e})")]
    NonConvergent { iters: usize, change: f64 },
    #[error("R^a - cov_term lost positive definiteness at iteration {iter}")]
    ConcavityLost { iter: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("scenario does not match the example structure: {0}")]
    StructureMismatch(String),
    #[error("joint channel support has {size} atoms, above the cap {cap}")]
    SupportTooLarge { size: usize, cap: usize },
    #[error("schema error at `{key}`: {msg}")]
    Schema { key: String, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
