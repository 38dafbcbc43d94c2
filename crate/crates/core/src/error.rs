use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("transaction #{index} is invalid: {reason}")]
    InvalidTransaction { index: usize, reason: String },
    #[error("duplicate txid {0}")]
    DuplicateTxid(String),
    #[error("timestamp of {0} decreases with block height")]
    NonMonotonicTimestamp(String),
    #[error("outputs exceed inputs in {0}")]
    NegativeFee(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("unknown tag category {0:?}")]
    UnknownCategory(String),
    #[error("unknown tag class {0:?}")]
    UnknownClass(String),
    #[error("unknown source trust {0:?}")]
    UnknownTrust(String),
    #[error("category {category} belongs to class {expected}, not {found}")]
    ClassMismatch {
        category: String,
        expected: String,
        found: String,
    },
    #[error("empty label for address {0}")]
    EmptyLabel(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifierError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("training data contains a single class")]
    DegenerateData,
    #[error("model has no trained trees")]
    ModelUntrained,
    #[error("feature vector has {found} entries, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("address {0} is listed as both positive and negative")]
    ContradictorySeed(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExploreError {
    #[error("no seed addresses given")]
    NoSeeds,
    #[error("classifier enabled but no model supplied")]
    ModelRequired,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelationError {
    #[error("reports were produced from different seed sets")]
    SeedMismatch,
}
