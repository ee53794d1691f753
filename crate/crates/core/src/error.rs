use thiserror::Error;

/// Errors raised by the dose-optimization engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("outcome pair (efficacy={efficacy}, toxicity={toxicity}) is not defined by the utility spec")]
    UnknownOutcomePair { efficacy: bool, toxicity: bool },

    #[error("invalid utility spec: {0}")]
    InvalidUtilitySpec(String),

    #[error("utility scores are not anchored to [0, 100]: {0}")]
    UnanchoredUtility(String),

    #[error("invalid design config: {0}")]
    InvalidConfig(String),

    #[error("invalid dose grid: {0}")]
    InvalidDoseGrid(String),

    #[error("outcome for patient {patient_id} belongs to dose {outcome_dose}, state is for dose {state_dose}")]
    DoseMismatch {
        patient_id: String,
        outcome_dose: usize,
        state_dose: usize,
    },

    #[error("prior components must be positive and finite")]
    NonPositivePrior,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("dose {0} has no evaluable patients")]
    EmptyDose(usize),

    #[error("no strategy mapped for intercurrent event `{0}`")]
    UnmappedIce(String),

    #[error("principal stratum strategy requires a stratum label ({0})")]
    MissingStratumLabel(String),

    #[error("invalid patient record {patient_id}: {reason}")]
    InvalidRecord { patient_id: String, reason: String },

    #[error("no tested doses")]
    NoTestedDoses,

    #[error("admissible set is empty")]
    EmptyAdmissibleSet,

    #[error("infeasible association parameter: {0}")]
    InfeasibleAssociation(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("trial {0} is terminated")]
    TrialTerminated(String),

    #[error("unknown trial {0}")]
    UnknownTrial(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by invalid input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
