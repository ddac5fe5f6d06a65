use thiserror::Error;

/// Errors raised by the simulation and campaign machinery.
///
/// Variants are split into configuration problems (bad input, inadmissible
/// combinations) and numerical-domain problems (a step left the domain of
/// its formula). The CLI maps them onto distinct exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CirError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scheme {scheme} is not admissible here: {reason}")]
    Inadmissible { scheme: String, reason: String },

    #[error("numerical domain error: {0}")]
    Domain(String),

    #[error("index range [{start}, {end}) out of bounds for grid with {len} cells")]
    IndexOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("step count exceeded ceiling of {0}")]
    StepLimit(usize),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("io error: {0}")]
    Io(String),
}

impl CirError {
    /// Short machine-readable code, used as the `status` column of result rows.
    pub fn code(&self) -> &'static str {
        match self {
            CirError::InvalidParameter(_) | CirError::InvalidConfig(_) => "config_error",
            CirError::Inadmissible { .. } => "inadmissible",
            CirError::Domain(_) => "domain_error",
            CirError::IndexOutOfRange { .. } => "index_error",
            CirError::StepLimit(_) => "step_limit",
            CirError::DegenerateFit(_) => "degenerate_fit",
            CirError::Io(_) => "io_error",
        }
    }

    /// Whether this is a numerical-domain failure rather than a configuration one.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            CirError::Domain(_) | CirError::Inadmissible { .. } | CirError::StepLimit(_)
        )
    }
}

impl From<std::io::Error> for CirError {
    fn from(e: std::io::Error) -> Self {
        CirError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CirError>;
