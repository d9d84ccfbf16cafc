use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: {what} has {got} rows, expected {expected}")]
    LengthMismatch {
        what: String,
        got: usize,
        expected: usize,
    },

    #[error("dimension mismatch: model expects {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown feature `{0}` (dataset columns are z, a, t)")]
    UnknownFeature(String),

    #[error("labels contain a single class with positive weight; the likelihood has no interior maximizer (set l2_penalty > 0)")]
    DegenerateClasses,

    #[error("complete separation detected after {iterations} iterations (coefficient norm {coef_norm:.3e}); set l2_penalty > 0")]
    Separation { iterations: usize, coef_norm: f64 },

    #[error("logistic fit did not converge in {iterations} iterations (gradient max-norm {gradient_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("positivity violated: {} rows have propensity above {bound} (first rows: {:?})", rows.len(), &rows[..rows.len().min(10)])]
    Positivity { bound: f64, rows: Vec<usize> },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("empty conditioning set: {0}")]
    EmptyConditioningSet(String),

    #[error("dataset has no potential-outcome columns (y0, y1); oracle quantities need them")]
    MissingOracle,

    #[error("nuisance scores are required for this evaluation mode")]
    MissingNuisances,

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: u64,
        column: String,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::UnknownFeature(_) => "unknown_feature",
            Error::DegenerateClasses => "degenerate_classes",
            Error::Separation { .. } => "separation",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Positivity { .. } => "positivity",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::EmptyConditioningSet(_) => "empty_conditioning_set",
            Error::MissingOracle => "missing_oracle",
            Error::MissingNuisances => "missing_nuisances",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    /// True for errors that represent a missing (inestimable) value rather than a failure.
    pub fn is_missing_value(&self) -> bool {
        matches!(
            self,
            Error::EmptyConditioningSet(_) | Error::UndefinedMetric(_)
        )
    }
}

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}
