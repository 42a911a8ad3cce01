use thiserror::Error;

/// Error type shared by all simulation layers.
#[derive(Error, Debug)]
pub enum SimError {
    /// A parameter or input failed validation before any numerics ran.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two matrices that must share a Fock dimension do not.
    #[error("shape mismatch: expected {expected}x{expected}, got {got_rows}x{got_cols}")]
    ShapeMismatch {
        expected: usize,
        got_rows: usize,
        got_cols: usize,
    },

    /// A density-matrix invariant (hermiticity, trace, positivity) was
    /// violated beyond tolerance. `time` is the simulation time at which the
    /// violation was detected, when applicable.
    #[error("state invariant violated: {what} (deviation {deviation:.3e}{})",
            time.map(|t| format!(" at t = {t}")).unwrap_or_default())]
    StateInvariant {
        what: String,
        deviation: f64,
        time: Option<f64>,
    },

    /// Population of the top Fock levels exceeded the hard truncation limit.
    #[error("truncation guard failure: top-level population {population:.3e} at dim {dim}")]
    TruncationGuard { population: f64, dim: usize },

    /// The requested model variant admits no steady state.
    #[error("no steady state: {0}")]
    NoSteadyState(String),

    /// A linear solve or eigenproblem failed to produce a usable answer.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl SimError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        SimError::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
