use thiserror::Error;

/// Errors raised by the analysis toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DdecError {
    #[error("delays not strictly increasing: {0}")]
    DelaysNotIncreasing(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("kernel domain mismatch: kernel covers [{start}, {end}] but the largest delay is {max_delay}")]
    KernelDomainMismatch { start: f64, end: f64, max_delay: f64 },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid grid function: {0}")]
    InvalidGrid(String),

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("step too large: {0}")]
    StepTooLarge(String),

    #[error("lattice overflow: more than {max_atoms} lattice points up to t = {horizon}")]
    LatticeOverflow { max_atoms: usize, horizon: f64 },

    #[error("no admissible kernel split: {0}")]
    NoValidSplit(String),

    #[error("window exceeded: {0}")]
    WindowExceeded(String),

    #[error("zero on the contour persisted after {retries} perturbations")]
    BoundaryZero { retries: usize },

    #[error("phase tracking step underflow near p = {re} + {im}i")]
    StepUnderflow { re: f64, im: f64 },

    #[error("memory budget exceeded: {entries} matrix entries requested, budget is {budget}")]
    MemoryBudget { entries: usize, budget: usize },

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl DdecError {
    /// Stable machine-readable tag used in diagnostic reports.
    pub fn kind(&self) -> &'static str {
        match self {
            DdecError::DelaysNotIncreasing(_) => "delays_not_increasing",
            DdecError::DimensionMismatch(_) => "dimension_mismatch",
            DdecError::KernelDomainMismatch { .. } => "kernel_domain_mismatch",
            DdecError::InvalidKernel(_) => "invalid_kernel",
            DdecError::InvalidGrid(_) => "invalid_grid",
            DdecError::OutOfRange(_) => "out_of_range",
            DdecError::StepTooLarge(_) => "step_too_large",
            DdecError::LatticeOverflow { .. } => "lattice_overflow",
            DdecError::NoValidSplit(_) => "no_valid_split",
            DdecError::WindowExceeded(_) => "window_exceeded",
            DdecError::BoundaryZero { .. } => "boundary_zero",
            DdecError::StepUnderflow { .. } => "step_underflow",
            DdecError::MemoryBudget { .. } => "memory_budget",
            DdecError::SolveFailed(_) => "solve_failed",
            DdecError::Parse(_) => "parse",
            DdecError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for DdecError {
    fn from(e: std::io::Error) -> Self {
        DdecError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for DdecError {
    fn from(e: serde_json::Error) -> Self {
        DdecError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DdecError>;
