use thiserror::Error;

pub type Result<T, E = CatnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CatnError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("no embedding for category {0}")]
    MissingEmbedding(u32),

    #[error("infeasible assignment: {n_gt} ground truths for {n_q} queries")]
    Infeasible { n_gt: usize, n_q: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CatnError {
    /// Process exit code used by the CLI: 2 for bad input, 3 for infeasible matching.
    pub fn exit_code(&self) -> i32 {
        match self {
            CatnError::Infeasible { .. } => 3,
            CatnError::Io(_) => 1,
            _ => 2,
        }
    }
}
