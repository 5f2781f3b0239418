use causal_segments::Error as CoreError;
use thiserror::Error;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config = 1,
    Data = 2,
    Degenerate = 3,
    StaleCache = 4,
}

#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct CliError {
    pub kind: ExitKind,
    pub stage: &'static str,
    pub message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        CliError {
            kind: ExitKind::Config,
            stage: "config",
            message,
        }
    }

    pub fn data(message: String) -> Self {
        CliError {
            kind: ExitKind::Data,
            stage: "data",
            message,
        }
    }

    /// Classifies a library error raised during `stage`.
    pub fn from_core(stage: &'static str, err: CoreError) -> Self {
        use CoreError::*;
        let kind = match &err {
            InvalidArgument(_) | InvalidRoles(_) | InvalidSpec(_) => ExitKind::Config,
            Io { .. } | EmptyFile(_) | Parse { .. } | MissingColumn(_) | NonBinaryTreatment { .. }
            | NonNumericOutcome { .. } | MissingValue { .. } | SchemaMismatch(_) => ExitKind::Data,
            StaleCache { .. } | MalformedCache(_) | Misaligned(_) => ExitKind::StaleCache,
            RankDeficient | IrlsDivergence { .. } | AllCandidatesFailed | DegenerateFold { .. } | EmptySegments
            | NoTestableSegments | RuleUndefined(_) | HteUndefined => ExitKind::Degenerate,
        };
        CliError {
            kind,
            stage,
            message: err.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }
}

/// Attaches a stage tag to library results.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> Stage<T> for causal_segments::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::from_core(stage, e))
    }
}
