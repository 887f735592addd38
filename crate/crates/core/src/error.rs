use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("FIPS code {0:?} contains non-digit characters")]
    NonNumericFips(String),
    #[error("FIPS code {0:?} must be 1 to 5 digits")]
    FipsLength(String),

    #[error("{file}: missing required column {column:?}")]
    SchemaMismatch { file: String, column: String },
    #[error("{file}: duplicate FIPS {fips} at row {row}")]
    DuplicateFips { file: String, fips: String, row: usize },
    #[error("{file}: row {row}, column {column:?}: cannot parse {value:?} as a number")]
    ParseNumber {
        file: String,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{file}: county {fips} is listed as its own neighbor")]
    SelfPair { file: String, fips: String },
    #[error("no FIPS code of the mortality table appears in the predictor tables")]
    EmptyJoin,
    #[error("no observed (non-suppressed) counties to pool a reference rate from")]
    NoObservedRecords,
    #[error("expected deaths are zero for population {population} at rate {rate}")]
    ZeroExpected { population: f64, rate: f64 },
    #[error("column {0:?} has no non-missing values")]
    FullyMissingColumn(String),
    #[error("group {0:?} is empty")]
    EmptyGroup(String),

    #[error("feature matrix is empty")]
    EmptyMatrix,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("column mismatch: model expects {expected:?}, got {found:?}")]
    ColumnMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("singular design matrix; collinear columns: {0:?}")]
    SingularDesign(Vec<String>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed model: {0}")]
    MalformedModel(String),
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("unsupported model format version {0}")]
    FormatVersion(u32),

    #[error("values have zero variance")]
    ZeroVariance,
    #[error("need at least {needed} usable counties, found {found}")]
    TooFewCounties { needed: usize, found: usize },
    #[error("need at least two clusters")]
    SingleCluster,
    #[error("outcome has zero variance; R^2 is undefined")]
    ZeroOutcomeVariance,
    #[error("MAPE is undefined: outcome contains zero at row {0}")]
    ZeroOutcome(usize),
    #[error("no county has outcome above {0}")]
    NoHighRisk(f64),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("missing output of an earlier stage: {0}")]
    MissingStageOutput(PathBuf),
    #[error("cannot read input file {path}: {source}")]
    InputFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the batch driver: 2 input/schema, 3 numerical,
    /// 4 missing prerequisite stage.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Fold { source, .. } | Error::Stage { source, .. } => source.exit_code(),
            Error::MissingStageOutput(_) => 4,
            Error::NonNumericFips(_)
            | Error::FipsLength(_)
            | Error::SchemaMismatch { .. }
            | Error::DuplicateFips { .. }
            | Error::ParseNumber { .. }
            | Error::EmptyJoin
            | Error::SelfPair { .. }
            | Error::InputFile { .. }
            | Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::UnknownFeature(_)
            | Error::ColumnMismatch { .. }
            | Error::FormatVersion(_)
            | Error::MalformedModel(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
