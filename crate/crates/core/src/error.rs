use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by callers (the CLI maps these to exit codes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or violated call precondition.
    Config,
    /// Malformed or inconsistent input data.
    Data,
    /// A numerical procedure failed (singularity, non-convergence, degeneracy).
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("unbalanced panel: unit {unit} has no observation for {time}")]
    UnbalancedPanel { unit: String, time: String },

    #[error("duplicate observation for unit {unit} at {time}")]
    DuplicateObservation { unit: String, time: String },

    #[error("treatment reversal at unit {unit}, time {t}")]
    TreatmentReversal { unit: usize, t: usize },

    #[error("no pre-treatment periods for unit {unit}")]
    NoPreTreatment { unit: usize },

    #[error("calendar misalignment; missing months: {missing:?}")]
    Alignment { missing: Vec<String> },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty month {month} during aggregation")]
    EmptyMonth { month: String },

    #[error("rank deficiency: collinear covariate column(s) {columns:?}")]
    RankDeficient { columns: Vec<String> },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("no convergence after {iterations} iterations (last changes: {trace:?})")]
    NoConvergence { iterations: usize, trace: Vec<f64> },

    #[error("particle degeneracy at t={t}")]
    Degeneracy { t: usize },

    #[error("{dropped} of {total} bootstrap replicates failed")]
    TooManyFailedReplicates { dropped: usize, total: usize },

    #[error("no estimable treated units: {0}")]
    Estimand(String),

    #[error("unknown or untreated unit: {0}")]
    UnknownUnit(String),

    #[error("no feasible factor count in the requested range")]
    NoFeasibleFactorCount,

    #[error("model has no latent factors; nothing to export")]
    EmptyExport,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Config(_) | Precondition(_) | InvalidParams(_) => ErrorKind::Config,
            Singular(_)
            | NoConvergence { .. }
            | Degeneracy { .. }
            | TooManyFailedReplicates { .. }
            | RankDeficient { .. }
            | NoFeasibleFactorCount => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
