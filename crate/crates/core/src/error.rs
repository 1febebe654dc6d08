use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: String, reason: String },

    #[error("{path}:{line}: field `{field}`: {reason}")]
    Parse {
        path: String,
        line: usize,
        field: String,
        reason: String,
    },

    #[error("insufficient records: need {required}, have {available}")]
    InsufficientRecords { required: usize, available: usize },

    #[error("training data must contain both classes (got only class {0})")]
    SingleClass(usize),

    #[error("empty training set: {0}")]
    EmptyTraining(String),

    #[error("probability {value} for member {member} is outside [0, 1]")]
    BadProbability { member: usize, value: f64 },

    #[error("view {0} has not been trained")]
    Untrained(String),

    #[error("incomplete gene specs, missing: {}", .0.join(", "))]
    MissingGenes(Vec<String>),

    #[error("objective returned {score} for vector {vector}")]
    BadObjective { score: f64, vector: String },

    #[error("objective failed for vector {vector}: {source}")]
    ObjectiveFailed {
        vector: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
