use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("duplicate register name `{0}`")]
    DuplicateRegister(String),

    #[error("unknown register `{0}`")]
    UnknownRegister(String),

    #[error("register `{register}` has no label `{label}`")]
    UnknownLabel { register: String, label: String },

    #[error("invalid register `{name}`: {reason}")]
    InvalidRegister { name: String, reason: String },

    #[error("assignment does not cover register `{0}`")]
    IncompleteAssignment(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("vectors {i} and {j} are not orthonormal (inner product {inner_re:+.3e}{inner_im:+.3e}i)")]
    NotOrthonormal {
        i: usize,
        j: usize,
        inner_re: f64,
        inner_im: f64,
    },

    #[error("measurement on {space} is incomplete: outcome vectors span {rank} of {dim} dimensions")]
    IncompleteMeasurement { space: String, rank: usize, dim: usize },

    #[error("duplicate outcome label `{0}`")]
    DuplicateOutcome(String),

    #[error("unknown outcome `{outcome}` for measurement by `{agent}`")]
    UnknownOutcome { agent: String, outcome: String },

    #[error("state is not normalized (norm {norm})")]
    NotNormalized { norm: f64 },

    #[error("zero vector cannot be normalized")]
    ZeroVector,

    #[error("non-finite amplitude")]
    NonFinite,

    #[error("conditioning on zero-probability event {event} (p = {probability:.3e})")]
    ZeroProbability { event: String, probability: f64 },

    #[error("overlapping register sets: `{0}` appears twice")]
    OverlappingTargets(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("time {0} is not in the schedule")]
    UnknownTime(String),

    #[error("collapse choice mismatch: {0}")]
    CollapseChoice(String),

    #[error("provenance cycle through statement {0}")]
    ProvenanceCycle(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn zero_probability(event: impl Into<String>, probability: f64) -> Self {
        Error::ZeroProbability {
            event: event.into(),
            probability,
        }
    }

    pub fn is_zero_probability(&self) -> bool {
        matches!(self, Error::ZeroProbability { .. })
    }
}
