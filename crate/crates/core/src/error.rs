use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error at row {row}, column `{column}`: cannot read {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("degenerate treatment assignment: {0} group is empty")]
    DegenerateTreatment(&'static str),

    #[error("insufficient samples for {k} components (have {m})")]
    InsufficientSamples { m: usize, k: usize },

    #[error("numerically singular {0}")]
    Singular(String),

    #[error("no feasible component count in {lo}..={hi} for {m} samples")]
    NoFeasibleComponents { lo: usize, hi: usize, m: usize },

    #[error("no treatment variation after residualization")]
    NoTreatmentVariation,

    #[error("missing ground truth for metric `{0}`")]
    MissingGroundTruth(&'static str),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("unknown estimator `{0}`")]
    UnknownEstimator(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}
