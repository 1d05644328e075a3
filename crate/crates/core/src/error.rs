use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Misuse of the differentiation engine (non-scalar output, detached graph, ...).
    #[error("autodiff contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid material parameters: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("relative L2 error is undefined: reference field has zero norm")]
    UndefinedMetric,

    #[error("non-finite value in stage {stage} at iteration {iteration}: {what}")]
    NonFinite {
        stage: u8,
        iteration: usize,
        what: &'static str,
    },

    #[error("line search precondition violated: directional derivative {0} is not negative")]
    NotDescent(f64),

    #[error("FDM oracle contaminated: unstable mode amplitude {amplitude:e} at step {step}")]
    OracleIntegrity { step: usize, amplitude: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
