use thiserror::Error;

/// Errors raised by the flight-control library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not skew-symmetric (|m + m^T|_F = {0:e})")]
    NotSkewSymmetric(f64),

    #[error("matrix is not a rotation (|R^T R - I|_F = {orthogonality:e}, det = {det})")]
    NotARotation { orthogonality: f64, det: f64 },

    #[error("desired heading is parallel to the thrust axis (|b3c x b1d| = {0:e})")]
    DegenerateProjection(f64),

    #[error("cannot orthonormalize a matrix with det = {0:e}")]
    SingularInput(f64),

    #[error("mixing matrix is singular (d = {d}, c_tau_f = {c_tau_f})")]
    SingularMixing { d: f64, c_tau_f: f64 },

    #[error("thrust axis is horizontal (e3 . R e3 = {0:e})")]
    ThrustSingularity(f64),

    #[error("commanded thrust vector vanishes (|A| = {0:e})")]
    ThrustVectorSingularity(f64),

    #[error("t = {t} is outside the segment window [{t_start}, {t_end}]")]
    OutOfWindow { t: f64, t_start: f64, t_end: f64 },

    #[error("invalid parameter: {0}")]
    Invalid(String),

    #[error("certificate inputs are infeasible: {0}")]
    InfeasibleInputs(String),

    #[error("exponential fit failed: {0}")]
    FitFailed(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("simulation aborted at t = {t}: {reason}")]
    SimAbort { t: f64, reason: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
