use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("joint noise covariance [[W, L], [L^T, V]] is not PSD (min eigenvalue {min_eig:.3e})")]
    JointNoiseNotPsd { min_eig: f64 },

    #[error("initial state covariance Sigma1 is not PSD (min eigenvalue {min_eig:.3e})")]
    Sigma1NotPsd { min_eig: f64 },

    #[error("invalid delay {0}: delay must be at least 1")]
    InvalidDelay(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { pivot: f64, index: usize },

    #[error("eigensolver did not converge")]
    NoConvergence,

    #[error("innovation covariance is numerically singular (min eigenvalue {min_eig:.3e})")]
    SingularInnovation { min_eig: f64 },

    #[error("pair is not detectable (offending eigenvalue {re:.6} + {im:.6}i)")]
    NotDetectable { re: f64, im: f64 },

    #[error("Riccati iteration diverged: {0}")]
    RiccatiDivergence(String),

    #[error("orthogonality constraint Gamma (I - S S^+) = 0 violated (residual {residual:.3e})")]
    OrthogonalityViolated { residual: f64 },

    #[error("output innovation covariance is singular (min eigenvalue {min_eig:.3e})")]
    SingularOutputCovariance { min_eig: f64 },

    #[error("malformed optimization problem: {0}")]
    MalformedProblem(String),

    #[error("problem is infeasible (phase-I margin {margin:.3e})")]
    Infeasible { margin: f64 },

    #[error("solver hit the iteration limit")]
    MaxIterations,

    #[error("numerical failure in solver: {0}")]
    NumericalFailure(String),

    #[error("AR(1) noise with |beta| = 1 has no stationary spectral density")]
    UnitCircleNoise,

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by numerics rather than by bad user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence
                | Error::RiccatiDivergence(_)
                | Error::Infeasible { .. }
                | Error::MaxIterations
                | Error::NumericalFailure(_)
                | Error::InternalConsistency(_)
                | Error::SingularOutputCovariance { .. }
        )
    }
}
