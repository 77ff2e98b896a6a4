use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The simplex QP hit its iteration cap. `best` holds the last iterate.
    #[error("QP solver did not converge within {iterations} iterations (duality gap {gap:e})")]
    SolverFailure {
        iterations: usize,
        gap: f64,
        best: Vec<f64>,
    },

    #[error("degenerate bundle: {0}")]
    DegenerateBundle(String),

    #[error("linearizations are affinely dependent (singular value ratio {ratio:e})")]
    DegenerateConstraints { ratio: f64 },

    #[error("singular linear system (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("subproblem is unbounded below (reduced Hessian eigenvalue {min_eigenvalue:e})")]
    UnboundedSubproblem { min_eigenvalue: f64 },

    #[error("need at least {needed} candidate points, got {available}")]
    InsufficientCandidates { needed: usize, available: usize },

    #[error("selected candidates are affinely dependent (sigma {sigma:e})")]
    DegenerateCandidates { sigma: f64 },

    #[error(
        "bundle size k = {k} exceeds n + 1 = {bound}: at most n + 1 gradients in R^n can be \
         affinely independent, so k <= 1 + dim of the subdifferential <= n + 1"
    )]
    BundleTooLarge { k: usize, bound: usize },

    #[error("matrix factorization failed: {0}")]
    Factorization(String),

    #[error("problem generation failed: {0}")]
    GenerationFailure(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("problem file: {0}")]
    Schema(String),
}
