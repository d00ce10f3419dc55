use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pole at x = {x}: |Q(x)| = {denominator:e} is below the floor")]
    Pole { x: f64, denominator: f64 },

    #[error("pole at element {index} (x = {x}): |Q(x)| = {denominator:e} is below the floor")]
    PoleAt {
        index: usize,
        x: f64,
        denominator: f64,
    },

    #[error("length mismatch for {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),

    #[error("target {0} has no Taylor series at 0")]
    NoTaylorSeries(String),

    #[error("degenerate Padé orders [{m}/{n}]: the denominator system is singular")]
    DegenerateOrders { m: usize, n: usize },

    #[error("least-squares fit did not converge after {iterations} iterations (last residual {residual:e})")]
    FitNonConvergence { iterations: usize, residual: f64 },

    #[error("unknown name {0:?}")]
    UnknownName(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("trace does not belong to the current network parameters")]
    StaleTrace,

    #[error("{path}: bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated file: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: IDX dimensions overflow the addressable size")]
    DimensionOverflow { path: PathBuf },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("pruning: {0}")]
    Prune(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn mismatch(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::LengthMismatch {
            what,
            expected,
            actual,
        }
    }
}
