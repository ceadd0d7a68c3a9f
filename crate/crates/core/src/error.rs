use thiserror::Error;

/// Errors raised anywhere in the registration / feature / classification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("simplification error: {0}")]
    Simplification(String),

    #[error("spherical parametrization failed with {folds} folded triangles")]
    ParamFailure { folds: usize },

    #[error("least-squares system is ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("reconstruction has imaginary residue {residue:.3e} above tolerance")]
    RealityViolation { residue: f64 },

    #[error("degenerate triangle at face {face}")]
    DegenerateTriangle { face: usize },

    #[error("template volume is not positive ({0})")]
    ZeroVolume(f64),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("too few subjects: {0}")]
    TooFewSubjects(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("subject {id}: {source}")]
    Subject {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an error with the id of the subject being processed.
    pub fn for_subject(self, id: impl Into<String>) -> Self {
        Error::Subject {
            id: id.into(),
            source: Box::new(self),
        }
    }

    /// Short machine-readable tag, used for structured CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse(_) => "ParseError",
            Error::Topology(_) => "TopologyError",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Simplification(_) => "SimplificationError",
            Error::ParamFailure { .. } => "ParamFailure",
            Error::IllConditioned { .. } => "IllConditioned",
            Error::RealityViolation { .. } => "RealityViolation",
            Error::DegenerateTriangle { .. } => "DegenerateTriangle",
            Error::ZeroVolume(_) => "ZeroVolume",
            Error::SchemaMismatch(_) => "SchemaMismatch",
            Error::TooFewSubjects(_) => "TooFewSubjects",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::DegenerateData(_) => "DegenerateData",
            Error::MissingArtifact(_) => "MissingArtifact",
            Error::Subject { source, .. } => source.kind(),
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
