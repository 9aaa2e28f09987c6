use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFiniteInput(&'static str),

    /// Some eigenvalue has a non-negligible imaginary part.
    #[error("matrix has complex eigenvalues (largest imaginary part {max_imag:.3e})")]
    ComplexSpectrum { max_imag: f64 },

    /// Two eigenvalues are closer than the requested separation.
    #[error("eigenvalues are not separated (minimum gap {min_separation:.3e})")]
    NearDegenerate { min_separation: f64 },

    #[error("eigenvalue {value:.6e} is not positive, no real logarithm exists")]
    NonPositiveEigenvalue { value: f64 },

    #[error("Schur iteration did not converge")]
    NoConvergence,

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("parameter vector of length {len} is not of the form d + d^2")]
    ThetaShape { len: usize },

    #[error("observation window is singular (smallest singular value {sigma_min:.3e})")]
    SingularWindow { sigma_min: f64 },

    #[error("sum of aggregation propagators is numerically singular")]
    SingularAggregationSum,

    #[error("objective or gradient became non-finite at theta = {theta:?}")]
    NonFinite { theta: Vec<f64> },

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("invalid observations: {0}")]
    InvalidObservations(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fit stopped after {iterations} iterations without converging")]
    FitNotConverged { iterations: usize },

    #[error("no converged replications for sample size {n}")]
    EmptySummary { n: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
