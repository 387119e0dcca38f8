use thiserror::Error;

/// Crate-wide error type. Variants carry enough structure for callers to
/// react programmatically (e.g. the CLI maps them to exit codes, experiment
/// drivers distinguish underflow from hard failures).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covering too large: estimated {estimate:.3e} centers exceeds cap {cap}")]
    CoveringTooLarge { estimate: f64, cap: usize },

    #[error("estimator denominator underflow: f_hat = {f_hat:.6e} < min_denominator = {min_denominator:.1e}")]
    DenominatorUnderflow { f_hat: f64, min_denominator: f64 },

    #[error("small-ball probability unavailable: {0}")]
    SmallBallUnavailable(String),

    #[error("kernel has no finite Lipschitz constant: {0}")]
    NotLipschitz(&'static str),

    #[error("dependence certificate does not license this run: {0}")]
    CertificateMismatch(String),

    #[error("beta outside the admissible region: {0}")]
    BetaOutsideRegion(String),

    #[error("statistic/bound family mismatch: {0}")]
    StatisticMismatch(String),

    #[error("joint law too large for exhaustive enumeration: {0}")]
    SupportTooLarge(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
