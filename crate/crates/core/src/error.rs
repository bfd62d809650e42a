use thiserror::Error;

/// Every failure surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameters out of phase: {0}")]
    OutOfPhase(String),
    #[error("face weight g would be negative (g = {0})")]
    DegenerateWeight(f64),
    #[error("operation requires n = 2 (got n = {0})")]
    NotO2(f64),
    #[error("point {re}+{im}i lies on the cut [-gamma, gamma]")]
    OnCut { re: f64, im: f64 },
    #[error("coefficient methods disagree at k = {k}: relative difference {rel:e}")]
    MethodDisagreement { k: usize, rel: f64 },
    #[error("mean of the offspring law is {mean} (|mean - 1| = {dev:e})")]
    CriticalityViolation { mean: f64, dev: f64 },
    #[error("quadrature did not converge: {0}")]
    QuadratureNonConvergence(String),
    #[error("table has K_max = {k_max}, index {p} requested")]
    TableTooSmall { p: usize, k_max: usize },
    #[error("walk exceeded {cap} steps before hitting -{p}")]
    RunawayGuard { p: u64, cap: u64 },
    #[error("cascade exceeded the node/vertex cap of {cap}")]
    MemoryGuard { cap: u64 },
    #[error("kernel at state {q} is degenerate: effective sample size {ess:.1}")]
    KernelDegenerate { q: u64, ess: f64 },
    #[error("insufficient data: {got} samples, need at least {need}")]
    InsufficientData { got: usize, need: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
