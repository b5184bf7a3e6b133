use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("target site 0 is missing")]
    MissingTargetSite,

    #[error("site {site} has no rows with treatment arm a={arm}")]
    EmptyTreatmentArm { site: usize, arm: u8 },

    #[error("covariate dimension mismatch: expected {expected}, found {found} (site {site})")]
    DimensionMismatch {
        site: usize,
        expected: usize,
        found: usize,
    },

    #[error("site {0} is empty")]
    EmptySite(usize),

    #[error("unknown site {0}")]
    UnknownSite(usize),

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("value outside the domain of the causal measure: {0}")]
    DomainViolation(String),

    #[error("labels contain a single class")]
    SingleClassLabels,

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("non-finite weight at x = {0:?}")]
    NonFiniteWeight(Vec<f64>),

    #[error("misspecification target {0} is not part of the bundle")]
    UnknownTarget(String),

    #[error("no target rows available")]
    NoTargetRows,

    #[error("measure {measure} is not supported by {method}")]
    UnsupportedMeasureForMode { measure: String, method: String },

    #[error("threshold grid is empty")]
    EmptyGrid,

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("unsupported data-generating form: {0}")]
    UnsupportedDgpForm(String),

    #[error("{file}: row {row}, column {column}: {message}")]
    Schema {
        file: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization failure: {0}")]
    Json(#[from] serde_json::Error),
}
