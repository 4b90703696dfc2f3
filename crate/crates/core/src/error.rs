use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input or configuration rejected before any numerics ran.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A sampled region contains no grid samples.
    #[error("region is empty at this resolution (radius {radius:.3e} below grid spacing {spacing:.3e})")]
    EmptyRegion { radius: f64, spacing: f64 },

    /// The field vanishes identically on the inner region of a growth ratio.
    #[error("infinite growth: field vanishes on the inner region")]
    InfiniteGrowth,

    #[error("eigensolver did not converge after {iterations} iterations (best residual {best_residual:.3e})")]
    NoConvergence { iterations: usize, best_residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// `true` for errors caused by bad input rather than a numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::EmptyRegion { .. } | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
