use thiserror::Error;

/// Errors produced by the deferral library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no data: record set is empty")]
    NoData,

    #[error("heterogeneous input: expected user {expected:?}, found {found:?}")]
    HeterogeneousInput { expected: String, found: String },

    #[error("invalid timestamp {0}: must be nonnegative epoch seconds")]
    InvalidTimestamp(i64),

    #[error("invalid slot scheme: {0}")]
    InvalidScheme(String),

    #[error("not a PMF: {0}")]
    NotPmf(String),

    #[error("alphabet mismatch: {0} vs {1} symbols")]
    LengthMismatch(usize, usize),

    #[error("divergence infinite: reference has zero mass at slot {slot} where t = {mass}")]
    DivergenceInfinite { slot: usize, mass: f64 },

    #[error("deferral rate {0} outside [0, 1)")]
    InvalidRate(f64),

    #[error("infeasible strategy: {0}")]
    Infeasible(String),

    #[error("numerical oracle did not converge after {iterations} iterations (best entropy {best_entropy} bits, gap {gap})")]
    NonConvergence {
        iterations: usize,
        best_entropy: f64,
        gap: f64,
    },

    #[error("relative privacy gain undefined: profile entropy is zero")]
    UndefinedGain,

    #[error("deferral rate {phi} exceeds the critical rate {phi_crit}")]
    AboveCriticalRate { phi: f64, phi_crit: f64 },

    #[error("non-causal pattern: forwarding {forward} at reordered slot {slot} with occupancy {occupancy}")]
    NonCausal {
        slot: usize,
        forward: f64,
        occupancy: f64,
    },

    #[error("internal consistency check failed: {0}")]
    Inconsistent(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no valid users in input")]
    NoValidUsers,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NoData => "no_data",
            Error::HeterogeneousInput { .. } => "heterogeneous_input",
            Error::InvalidTimestamp(_) => "invalid_timestamp",
            Error::InvalidScheme(_) => "invalid_scheme",
            Error::NotPmf(_) => "not_pmf",
            Error::LengthMismatch(..) => "length_mismatch",
            Error::DivergenceInfinite { .. } => "divergence_infinite",
            Error::InvalidRate(_) => "invalid_rate",
            Error::Infeasible(_) => "infeasible",
            Error::NonConvergence { .. } => "non_convergence",
            Error::UndefinedGain => "undefined_gain",
            Error::AboveCriticalRate { .. } => "above_critical_rate",
            Error::NonCausal { .. } => "non_causal",
            Error::Inconsistent(_) => "inconsistent",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::NoValidUsers => "no_valid_users",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
