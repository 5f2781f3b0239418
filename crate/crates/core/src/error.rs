use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("empty file: {0}")]
    EmptyFile(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid column roles: {0}")]
    InvalidRoles(String),

    #[error("non-binary treatment value `{value}` at line {line}")]
    NonBinaryTreatment { line: usize, value: String },

    #[error("non-numeric outcome value `{value}` at line {line}")]
    NonNumericOutcome { line: usize, value: String },

    #[error("missing value in column `{column}` at line {line}")]
    MissingValue { line: usize, column: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("feature schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("rank-deficient; add ridge")]
    RankDeficient,

    #[error("IRLS failed to converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    IrlsDivergence { iterations: usize, gradient_norm: f64 },

    #[error("every candidate learner failed to fit")]
    AllCandidatesFailed,

    #[error("degenerate fold {fold}: training units contain only one treatment arm; reduce K or stratify")]
    DegenerateFold { fold: usize },

    #[error("empty segment index")]
    EmptySegments,

    #[error("no testable segments (every segment has a single unit)")]
    NoTestableSegments,

    #[error("rule undefined on segment {0}")]
    RuleUndefined(String),

    #[error("HTE undefined; rule treats everyone or no one")]
    HteUndefined,

    #[error("estimates are not aligned with the dataset: {0}")]
    Misaligned(String),

    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),

    #[error("stale cache: dataset fingerprint {found} does not match cache {expected}")]
    StaleCache { expected: String, found: String },

    #[error("malformed cache: {0}")]
    MalformedCache(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
