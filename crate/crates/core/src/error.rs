use thiserror::Error;

/// Every failure the library can report.
///
/// Variants are grouped by the class of problem so that front ends can map
/// them onto exit codes: [`Error::is_config`] marks the input errors, and
/// everything else is numerical.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown selector `{0}`")]
    UnknownSelector(String),
    #[error("background does not support this operation: {0}")]
    Capability(String),
    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),
    #[error("perturbation too large: {what} = {value:.3e} exceeds {limit:.3e}")]
    Smallness { what: String, value: f64, limit: f64 },
    #[error("normalization violated: {0}")]
    Normalization(String),
    #[error("resonant solve: {0}")]
    Resonance(String),
    #[error("no convergence: {0}")]
    NonConvergence(String),
    #[error("step size underflow at tau = {tau:.6} (dt = {dt:.3e})")]
    StepUnderflow { tau: f64, dt: f64 },
    #[error("gauge map is not a diffeomorphism: {0}")]
    GaugeDegeneration(String),
    #[error("spectral clearance violated: {0}")]
    SpectralClearance(String),
    #[error("contraction gate failed: {0}")]
    Contraction(String),
    #[error("tail integral not certified: {0}")]
    Tail(String),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_) | Error::UnknownSelector(_) | Error::Capability(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
