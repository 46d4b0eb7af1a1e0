use thiserror::Error;

/// Errors produced anywhere in the draw library.
#[derive(Debug, Error)]
pub enum DrawError {
    #[error("malformed instance document: {0}")]
    MalformedDocument(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("scenario id {0} out of range 0..=31")]
    ScenarioOutOfRange(u32),

    #[error("assignment is incomplete ({filled} of {slots} slots filled)")]
    IncompleteAssignment { filled: usize, slots: usize },

    #[error("host exclusion set has {size} members but only {groups} groups exist")]
    HostExclusionTooLarge { size: usize, groups: usize },

    #[error("no valid assignment exists for this instance and constraint set")]
    Infeasible,

    #[error("proposal budget of {cap} exhausted without an accepted assignment")]
    ProposalBudgetExhausted { cap: u64 },

    #[error("enumeration needs {needed} items but the budget is {budget}")]
    EnumerationBudgetExceeded { needed: u128, budget: u64 },

    #[error("at least one trial is required")]
    ZeroTrials,

    #[error("matrix for pots ({pot_a},{pot_b}) is not doubly stochastic (deviation {deviation:e})")]
    NotStochastic {
        pot_a: usize,
        pot_b: usize,
        deviation: f64,
    },

    #[error("value {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("division by zero inequality (uniform I = 0)")]
    ZeroBaseline,

    #[error("{0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("results document: {0}")]
    Results(String),
}

pub type Result<T, E = DrawError> = std::result::Result<T, E>;
