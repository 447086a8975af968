use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate unit id {0:?}")]
    DuplicateId(String),
    #[error("data row {row}: invalid arm value {value:?} (expected 0 or 1)")]
    InvalidArm { row: usize, value: String },
    #[error("data row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("column {0:?} not found in CSV header")]
    MissingColumn(String),
    #[error("unit {0:?} was sampled for coding but has no gold outcome")]
    CodedUnitMissingY(String),
    #[error("arm {arm}: coding budget {budget} exceeds arm size {size}")]
    BudgetExceedsArm { arm: u8, budget: usize, size: usize },
    #[error("budget {budget} cannot satisfy the per-stratum floors (needs at least {required})")]
    BudgetTooSmall { budget: usize, required: usize },
    #[error("allocation infeasible in arm {arm} stratum {stratum}")]
    AllocationInfeasible { arm: u8, stratum: usize },
    #[error("realized draw does not match the allocation in arm {arm} stratum {stratum}")]
    StratumDrawMismatch { arm: u8, stratum: usize },
    #[error("unit {0:?} lacks the gold outcome required by this operation")]
    UncodedUnit(String),
    #[error("arm {0} has no coded units in the draw")]
    EmptyArmSample(u8),
    #[error("arm {0} has no units")]
    EmptyArm(u8),
    #[error("arm {arm} stratum {stratum}: stratum too small for a finite-population variance")]
    StratumTooSmall { arm: u8, stratum: usize },
    #[error("arm {arm} stratum {stratum}: {n} coded unit(s) cannot support a variance estimate")]
    StratumTooSmallForVariance { arm: u8, stratum: usize, n: usize },
    #[error("all values are equal; cannot form {0} quantile groups")]
    AllValuesEqual(usize),
    #[error("unknown or non-numeric stratification variable {0:?}")]
    UnknownVariable(String),
    #[error("every candidate stratification was filtered out")]
    AllFiltered,
    #[error("target R^2 must lie strictly between 0 and 1 (got {0})")]
    InvalidR2(f64),
    #[error("stratum weights must be positive and sum to 1")]
    NonpositiveWeights,
    #[error("enumeration of {required} cases exceeds the cap of {cap}")]
    EnumerationTooLarge { required: u64, cap: u64 },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
