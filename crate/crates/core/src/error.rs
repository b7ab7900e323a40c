use thiserror::Error;

use crate::constructions::ConstraintReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: need d >= 2")]
    InvalidDimension(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("direction undefined: point coincides with the cone apex")]
    UndefinedDirection,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("normalization did not converge: relative error {rel_error:.3e} exceeds {limit:.1e}")]
    Precision { rel_error: f64, limit: f64 },

    #[error("sampler degenerate: acceptance rate {rate:.3e} below 1e-3")]
    SamplerDegenerate { rate: f64 },

    #[error("index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("point lies outside the support of the source")]
    OutsideSupport,

    #[error("instance violates {} constraint(s); first: {}", .0.len(), .0.first().map(|r| r.to_string()).unwrap_or_default())]
    ConstraintViolation(Vec<ConstraintReport>),

    #[error("certificate failure: point {point:?} assigned atom {assigned} but atom {closer} is closer by {gap:.3e}")]
    Certificate { point: Vec<f64>, assigned: usize, closer: usize, gap: f64 },

    #[error("pushforward failure: atom {atom} has empirical mass {empirical:.6} vs weight {expected:.6} ({sigmas:.1} standard errors)")]
    Pushforward { atom: usize, empirical: f64, expected: f64, sigmas: f64 },

    #[error("measures are imbalanced: total masses {source_mass} and {target_mass}")]
    Imbalance { source_mass: f64, target_mass: f64 },

    #[error("discrete solver failure: {0}")]
    Solver(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("no witness guarantee: alpha = {alpha} must exceed p/(2(p+1)) = {threshold}")]
    NoWitnessGuarantee { alpha: f64, threshold: f64 },

    #[error("no witness found within the search range: {0}")]
    WitnessNotFound(String),

    #[error("csv export: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
