use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector that must be normalized has zero (or non-finite) length.
    /// `row` identifies the offending row when the input was a matrix.
    ZeroNorm { row: Option<usize> },
    DimensionMismatch { expected: usize, found: usize },
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    Empty(&'static str),
    OutOfRange { what: &'static str, value: f64 },
    NonFinite { what: String },
    NotEnoughClasses { needed: usize, found: usize },
    /// Small-cluster synthesis ran out of destination classes before
    /// reaching the requested rate.
    NoiseExhausted { achieved: f64, requested: f64 },
    Invalid(String),
    /// A training iteration failed; `stage` names the step of the loop.
    Stage {
        iteration: u64,
        stage: &'static str,
        source: Box<Error>,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ZeroNorm { row: Some(r) } => write!(f, "row {r} has zero norm"),
            Error::ZeroNorm { row: None } => write!(f, "vector has zero norm"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::ShapeMismatch {
                what,
                expected,
                found,
            } => write!(
                f,
                "{what}: expected shape {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::Empty(what) => write!(f, "{what} is empty"),
            Error::OutOfRange { what, value } => write!(f, "{what} out of range: {value}"),
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::NotEnoughClasses { needed, found } => {
                write!(f, "need at least {needed} non-empty classes, found {found}")
            }
            Error::NoiseExhausted {
                achieved,
                requested,
            } => write!(
                f,
                "ran out of destination classes at noise fraction {achieved:.4} (requested {requested:.4})"
            ),
            Error::Invalid(msg) => f.write_str(msg),
            Error::Stage {
                iteration,
                stage,
                source,
            } => write!(f, "iteration {iteration}, {stage}: {source}"),
        }
    }
}

impl core::error::Error for Error {}
