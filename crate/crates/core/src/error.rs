use thiserror::Error;

/// Errors raised by the geometry engine.
///
/// Numerical outcomes that an operation reports as data (a chart
/// exit recorded in a `FlowDomain`, a failed grading check) are *not*
/// errors; they travel inside the returned reports.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("level {level} out of range 1..={levels}")]
    LevelOutOfRange { level: usize, levels: usize },

    #[error("point {point:?} lies outside the chart domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("Gram matrix at level {level} is singular at {point:?}")]
    SingularGram { level: usize, point: Vec<f64> },

    #[error("grading violated between levels {lower} and {upper} (min eigenvalue {min_eigenvalue:e})")]
    Grading { lower: usize, upper: usize, min_eigenvalue: f64 },

    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geodesic left the domain at t = {t} before reaching t = {t_end}")]
    DomainExit { t: f64, t_end: f64 },

    #[error("solution blew up near t = {t}")]
    BlowUp { t: f64 },

    #[error("shooting did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("shooting Jacobian is singular (possible conjugate point), condition {condition:e}")]
    SingularJacobian { condition: f64 },

    #[error("time grids of curve and lift do not match")]
    GridMismatch,

    #[error("variation field does not vanish at the endpoints (|Y(a)| = {start:e}, |Y(b)| = {end:e})")]
    NotProper { start: f64, end: f64 },

    #[error("no distance certificate: {0}")]
    NoCertificate(String),

    #[error("unknown catalog problem `{0}`")]
    UnknownProblem(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("matrix left the positive-definite cone at t = {t}")]
    PositivityLost { t: f64 },

    #[error("csv: {0}")]
    Csv(String),
}

impl GeoError {
    /// Short machine-readable tag used by the CLI and the C ABI.
    pub fn reason(&self) -> &'static str {
        match self {
            GeoError::DimensionMismatch { .. } => "dimension_mismatch",
            GeoError::LevelOutOfRange { .. } => "level_out_of_range",
            GeoError::OutsideDomain { .. } => "outside_domain",
            GeoError::SingularGram { .. } => "singular_gram",
            GeoError::Grading { .. } => "grading",
            GeoError::InvalidSpace(_) => "invalid_space",
            GeoError::InvalidArgument(_) => "invalid_argument",
            GeoError::DomainExit { .. } => "domain_exit",
            GeoError::BlowUp { .. } => "blow_up",
            GeoError::NoConvergence { .. } => "no_convergence",
            GeoError::SingularJacobian { .. } => "singular_jacobian",
            GeoError::GridMismatch => "grid_mismatch",
            GeoError::NotProper { .. } => "not_proper",
            GeoError::NoCertificate(_) => "no_certificate",
            GeoError::UnknownProblem(_) => "unknown_problem",
            GeoError::InvalidParameter { .. } => "invalid_parameter",
            GeoError::PositivityLost { .. } => "positivity_lost",
            GeoError::Csv(_) => "csv",
        }
    }

    /// True for failures of a numerical method (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            GeoError::DomainExit { .. }
                | GeoError::BlowUp { .. }
                | GeoError::NoConvergence { .. }
                | GeoError::SingularJacobian { .. }
                | GeoError::SingularGram { .. }
                | GeoError::NoCertificate(_)
                | GeoError::PositivityLost { .. }
        )
    }
}

pub type Result<T, E = GeoError> = std::result::Result<T, E>;
