use std::fmt;

use thiserror::Error;

/// One failed check from [`crate::model::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    TooFewSites(usize),
    NonFinite {
        what: &'static str,
        index: usize,
    },
    NonPositiveCoupling {
        what: &'static str,
        index: usize,
        value: f64,
    },
    NegativeRate {
        what: &'static str,
        value: f64,
    },
    InvalidInterval(f64),
    IntervalExceedsStep {
        dt: f64,
        step: f64,
    },
    ZeroRuns,
    TooFewPoints(usize),
    ZeroShots,
    InvalidWindow(f64),
    InvalidScale(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(
                f,
                "dimension mismatch: {what} has length {found}, expected {expected}"
            ),
            Violation::TooFewSites(n) => write!(f, "chain needs at least 2 sites, got {n}"),
            Violation::NonFinite { what, index } => {
                write!(f, "{what}[{index}] is not finite")
            }
            Violation::NonPositiveCoupling { what, index, value } => write!(
                f,
                "{what}[{index}] = {value} is not positive (anti-ferromagnetic flag is set)"
            ),
            Violation::NegativeRate { what, value } => write!(f, "{what} = {value} is negative"),
            Violation::InvalidInterval(dt) => {
                write!(f, "noise interval dt = {dt} must be positive")
            }
            Violation::IntervalExceedsStep { dt, step } => {
                write!(f, "noise interval dt = {dt} exceeds sampling step {step}")
            }
            Violation::ZeroRuns => write!(f, "noise.runs must be at least 1"),
            Violation::TooFewPoints(n) => write!(f, "sampling.n_points = {n}, need at least 2"),
            Violation::ZeroShots => write!(f, "sampling.n_meas must be at least 1"),
            Violation::InvalidWindow(t) => write!(f, "sampling.t_max = {t} must be positive"),
            Violation::InvalidScale(s) => {
                write!(f, "spurious scale {s} must be finite and non-negative")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", join(.0))]
    Validation(Vec<Violation>),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("spurious terms are not supported here: {0}")]
    SpuriousPresent(&'static str),

    #[error("spurious terms must be realized from a seed first")]
    UnrealizedSpurious,

    #[error("chain of {sites} sites exceeds simulator cap of {cap}")]
    TooManySites { sites: usize, cap: usize },

    #[error("ill-posed spectral data: {0}")]
    IllPosed(String),

    #[error("Lanczos breakdown at step {step}: {detail}")]
    LanczosBreakdown { step: usize, detail: String },

    #[error("fit input error: {0}")]
    FitInput(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn join(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
