use nalgebra::DVector;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An eigenvalue fell below the relative floor used for matrix roots.
    #[error("singular matrix: eigenvalue #{index} = {value:e} is below the floor {floor:e}")]
    Singular { index: usize, value: f64, floor: f64 },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("requested rank {requested} exceeds the achievable maximum {max}")]
    Rank { requested: usize, max: usize },

    #[error("degenerate signal: no positive eigenvalue in the normalized background covariance")]
    DegenerateSignal,

    #[error("spectrum exhausted: sigma_{q} = {value:e} is not positive")]
    SpectrumExhausted { q: usize, value: f64 },

    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    Convergence {
        iterations: usize,
        grad_norm: f64,
        best: Box<DVector<f64>>,
    },

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("numerical blow-up at step {step}: {reason}")]
    Blowup { step: u64, reason: String },

    #[error("data gap: no trajectory stored at t = {0} s")]
    DataGap(f64),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
