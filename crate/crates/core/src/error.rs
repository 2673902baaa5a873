use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PmedError {
    #[error("invalid exponent m = {0}: must be > 1")]
    InvalidExponent(f64),

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("time step {dt:e} exceeds the stability limit {limit:e}")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("support reaches within two cells of the box edge")]
    DomainOverflow,

    #[error("invalid time: t + tau = {0} must be positive")]
    InvalidTime(f64),

    #[error("point (x = {x:?}, t = {t}) lies outside the rescaling cylinder")]
    OutOfCylinder { x: Vec<f64>, t: f64 },

    #[error("boundary set is empty")]
    EmptyBoundary,

    #[error("potential is not flagged strictly convex")]
    UnsupportedPotential,

    #[error("sublevel set {{Phi <= {c}}} does not fit inside the box")]
    DomainTooSmall { c: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty boundary at snapshot times {0:?}")]
    BoundaryGap(Vec<f64>),

    #[error("at t = {t}: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<PmedError>,
    },
}

impl PmedError {
    /// Short machine-readable code, used by the CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            PmedError::InvalidExponent(_) => "invalid-exponent",
            PmedError::InvalidParameter { .. } => "invalid-parameter",
            PmedError::InvalidGrid(_) => "invalid-grid",
            PmedError::InvalidField(_) => "invalid-field",
            PmedError::StepTooLarge { .. } => "step-too-large",
            PmedError::DomainOverflow => "domain-overflow",
            PmedError::InvalidTime(_) => "invalid-time",
            PmedError::OutOfCylinder { .. } => "out-of-cylinder",
            PmedError::EmptyBoundary => "empty-boundary",
            PmedError::UnsupportedPotential => "unsupported-potential",
            PmedError::DomainTooSmall { .. } => "domain-too-small",
            PmedError::InvalidInput(_) => "invalid-input",
            PmedError::BoundaryGap(_) => "boundary-gap",
            PmedError::AtTime { source, .. } => source.code(),
        }
    }

    pub(crate) fn at_time(self, t: f64) -> Self {
        PmedError::AtTime {
            t,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = PmedError> = std::result::Result<T, E>;

pub(crate) fn check_exponent(m: f64) -> Result<()> {
    if m > 1.0 && m.is_finite() {
        Ok(())
    } else {
        Err(PmedError::InvalidExponent(m))
    }
}
