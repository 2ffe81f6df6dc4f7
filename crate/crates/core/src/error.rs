use std::fmt;

use thiserror::Error;

/// Every invariant a configuration violated, collected in one pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationErrors(pub Vec<String>);

impl ValidationErrors {
    pub fn messages(&self) -> &[String] {
        &self.0
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.0.iter().any(|m| m.contains(needle))
    }
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join("; "))
    }
}

impl std::error::Error for ValidationErrors {}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Invalid(#[from] ValidationErrors),

    #[error("grid size {grid} exceeds the {tiles} available Q tiles")]
    GridTooLarge { grid: u64, tiles: u64 },

    #[error("trace has {events} sector events, above the cap of {cap}; use tile-block fidelity or raise the cap")]
    TraceTooLarge { events: u64, cap: u64 },

    #[error("trace is not block-atomic at sector {sector}: {reason}")]
    NotBlockAtomic { sector: u64, reason: String },

    #[error("tile-block fidelity requires a fully-associative cache")]
    BlockFidelityNeedsFullAssociativity,

    #[error("statistics come from different workloads: {0}")]
    MismatchedInputs(String),

    #[error("capacity {capacity} is beyond the histogram's exact range ({cap})")]
    CapacityBeyondHistogram { capacity: u64, cap: u64 },

    #[error("MAPE needs at least one pair")]
    EmptySeries,

    #[error("MAPE observation {index} is {value}, must be positive")]
    NonPositiveObservation { index: usize, value: f64 },

    #[error("sweep axes non-empty violated: axis `{0}` has no values")]
    EmptySweepAxis(&'static str),

    #[error("sweep has {points} points, above the cap of {cap}")]
    SweepTooLarge { points: usize, cap: usize },

    #[error("field `{field}` value {value} does not fit the dump record")]
    DumpOverflow { field: &'static str, value: u64 },

    #[error("malformed trace dump: {0}")]
    MalformedDump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
