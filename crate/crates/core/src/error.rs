use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("atom number {n} exceeds tabulation limit {n_max}")]
    TabulationLimit { n: usize, n_max: usize },

    #[error("invalid time span [{start}, {end}]")]
    InvalidTimeSpan { start: f64, end: f64 },

    #[error("signal span {span} s is shorter than one sample ({dt} s)")]
    SpanTooShort { span: f64, dt: f64 },

    #[error("no samples fall in window [{start}, {end})")]
    EmptyWindow { start: f64, end: f64 },

    #[error("found {found} resolvable peaks, need {needed}; lower n_resolved or supply manual boundaries")]
    TooFewPeaks { found: usize, needed: usize },

    #[error("inconsistent bands: {0}")]
    InconsistentBands(String),

    #[error("root not bracketed on [{lo}, {hi}]; widen the bracket")]
    NotBracketed { lo: f64, hi: f64 },

    #[error("minimizer {gamma_hat} sits at the bracket edge {edge}; bracket too narrow")]
    BracketEdge { gamma_hat: f64, edge: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
