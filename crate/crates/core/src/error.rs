use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("frame vectors must have even nonzero length, got {0}")]
    OddDimension(usize),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("initial fiber vector is zero")]
    ZeroFiberVector,

    #[error("infeasible initial speed: lambda^2 = {lambda_sq} exceeds 1")]
    InfeasibleSpeed { lambda_sq: f64 },

    #[error("missing horizontal direction: u_dir is zero while lambda^2 = {lambda_sq} < 1")]
    MissingDirection { lambda_sq: f64 },

    #[error("state violates unit-bundle constraints (|xi| - 1 = {norm_defect:e}, <xi, w> = {radial:e})")]
    ConstraintViolation { norm_defect: f64, radial: f64 },

    #[error("non-finite state encountered after sigma = {last_sigma}")]
    NonFiniteState { last_sigma: f64 },

    #[error("unit-bundle constraint drift {drift:e} exceeds limit at sigma = {sigma}")]
    ConstraintDrift { sigma: f64, drift: f64 },

    #[error("twisted curvature operator is only used as a parallel operator on the unit tangent bundle")]
    NotParallel,

    #[error("finite-difference stencil of half-width {needed} does not fit around sample {center} of {len}")]
    InsufficientStencil { center: usize, needed: usize, len: usize },

    #[error("need at least {needed} samples, trajectory has {actual}")]
    TooFewSamples { needed: usize, actual: usize },

    #[error("degenerate projection: the projected curve has zero velocity")]
    DegenerateProjection,

    #[error("not applicable: {0}")]
    Inapplicable(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("malformed configuration: {0}")]
    MalformedConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
