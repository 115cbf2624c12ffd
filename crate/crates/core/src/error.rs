use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures surfaced by every module, prefixed with the module that raised them.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("model: {0}")]
    InvalidModel(String),

    #[error("model: dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("model: time grid: {0}")]
    InvalidGrid(String),

    #[error("model: path blow-up at t = {t}")]
    PathBlowUp { t: f64 },

    #[error("model: non-Gaussian push-forward: drift perturbation `{family}` does not preserve Gaussianity")]
    NonGaussianPushForward { family: String },

    #[error("model: covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("model: covariance is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("kalman_bucy: Riccati step failure at step {step}")]
    RiccatiStepFailure { step: usize },

    #[error("kalman_bucy: non-finite observation increment at step {step}")]
    NonFiniteObservation { step: usize },

    #[error("kalman_bucy: {kind} pair: eigenvalue {re} + {im}i fails the Hautus test")]
    UndetectablePair { kind: &'static str, re: f64, im: f64 },

    #[error("kalman_bucy: Riccati flow did not converge by t = {max_t}")]
    AreNotConverged { max_t: f64 },

    #[error("kalman_bucy: {0}")]
    GridMismatch(String),

    #[error("kalman_bucy: psi-decay window {window} longer than available path {available}")]
    WindowTooLong { window: f64, available: f64 },

    #[error("particle_filter: weight collapse at step {step}")]
    WeightCollapse { step: usize },

    #[error("particle_filter: {0}")]
    InvalidCloud(String),

    #[error("wasserstein: instance too large for exact assignment (N = {n} > {max})")]
    AssignmentTooLarge { n: usize, max: usize },

    #[error("wasserstein: {0}")]
    InvalidMeasure(String),

    #[error("error_growth: singular initial condition: {0}")]
    SingularInitialCondition(String),

    #[error("error_growth: {0}")]
    InvalidErrorModel(String),

    #[error("experiments: {0}")]
    Experiment(String),

    #[error("cli_io: config invalid:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("cli_io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
