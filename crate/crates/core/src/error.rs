use thiserror::Error;

use crate::model::FeatureIndex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("exact expectation requires a discrete law; use a Monte Carlo estimator for generative laws")]
    GenerativeLaw,

    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("feature map {index} is degenerate on the support (lambda_min = {lambda_min:.3e})")]
    DegenerateFeature { index: FeatureIndex, lambda_min: f64 },

    #[error("feature maps {first} and {second} induce the same linear class on the support")]
    DuplicateClass { first: FeatureIndex, second: FeatureIndex },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch { context: &'static str, expected: usize, got: usize },

    #[error("sample size must be at least 1")]
    EmptySample,

    #[error("sparsity {s} must lie in 1..={d}")]
    InvalidSparsity { s: usize, d: usize },

    #[error("collection has no feature maps")]
    EmptyCollection,

    #[error("unknown feature index {0}")]
    UnknownIndex(FeatureIndex),

    #[error("index {0} is optimal; the normalized loss difference is undefined")]
    UndefinedDenominator(FeatureIndex),

    #[error("bound report is missing `{0}`")]
    IncompleteReport(&'static str),

    #[error("need at least {needed} trials, got {got}")]
    InsufficientTrials { needed: usize, got: usize },

    #[error("joint covariance is not PSD at pair ({first}, {second}) (eigenvalue {eigenvalue:.3e})")]
    NotPsd { first: FeatureIndex, second: FeatureIndex, eigenvalue: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
