//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by dataset construction, the truth oracle, the numerical
/// engine, and the estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate time point for subject {subject_id} at t={time}")]
    DuplicateTimePoint { subject_id: String, time: f64 },

    #[error("subject {subject_id} appears in more than one arm ({first} and {second})")]
    InconsistentArm {
        subject_id: String,
        first: u8,
        second: u8,
    },

    #[error("subject {subject_id} has no baseline (t=0) measurement")]
    MissingBaseline { subject_id: String },

    #[error("non-finite value in record for subject {subject_id}: {field}")]
    NonFiniteValue { subject_id: String, field: &'static str },

    #[error("arm ids must be dense 0..K with 0 present; saw {observed:?}")]
    ArmLabels { observed: Vec<u8> },

    #[error("empty record list")]
    EmptyInput,

    #[error("{what} outside its domain: {value}")]
    DomainError { what: &'static str, value: f64 },

    #[error("weight function must be positive on the whole interval (w({t}) = {value})")]
    WeightError { t: f64, value: f64 },

    #[error("matrix not positive definite after jitter escalation")]
    NotPD,

    #[error("singular design: {0}")]
    SingularDesign(&'static str),

    #[error(
        "optimizer failed to converge after {restarts} restart(s); best objective {best_value}"
    )]
    NoConvergence {
        restarts: usize,
        best_value: f64,
        best_theta: Vec<f64>,
        n_iter: usize,
    },

    #[error("no observations beyond the change point tau0={tau0}")]
    DegenerateHinge { tau0: f64 },

    #[error("every change-point candidate failed; last error: {last}")]
    AllCandidatesFailed { last: String },

    #[error("arm {arm} has no subjects with >=2 distinct visit times")]
    ArmEmptyAfterExclusion { arm: u8 },

    #[error("no observations for arm {arm} at visit t={time}")]
    EmptyCell { arm: u8, time: f64 },

    #[error("estimand interval [{t1}, {t2}] is not representable by this fit: {reason}")]
    UnsupportedInterval { t1: f64, t2: f64, reason: &'static str },

    #[error("need at least 2 estimates to summarize, got {0}")]
    TooFewEstimates(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
