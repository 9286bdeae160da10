use std::fmt;
use std::io;

/// Where in an input a parse failure happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Byte(u64),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Byte(n) => write!(f, "byte {n}"),
        }
    }
}

/// Broad failure class, used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("embedding spaces differ: `{left}` vs `{right}`")]
    SpaceMismatch { left: String, right: String },
    #[error("vector norm {norm:e} is below the degeneracy threshold")]
    DegenerateVector { norm: f64 },
    #[error("non-finite value in a `{0}` embedding")]
    NonFinite(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("parse error at {at}: {msg}")]
    Parse { at: Location, msg: String },
    #[error("duplicate utterance id `{0}`")]
    DuplicateUtteranceId(String),
    #[error("unknown utterance id `{0}`")]
    UnknownUtterance(String),
    #[error("unknown embedding space `{0}`")]
    UnknownSpace(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("record count mismatch: expected {expected}, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("bad magic bytes: expected {expected}")]
    MagicMismatch { expected: &'static str },
    #[error("unsupported array layout: {0}")]
    UnsupportedDtype(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("duplicate speaker id `{0}`")]
    DuplicateSpeaker(String),
    #[error("missing embedding: {0}")]
    MissingEmbedding(String),
    #[error("need at least two speakers with test utterances, found {0}")]
    InsufficientSpeakers(usize),
    #[error("unknown speaker pair `{0}`")]
    UnknownPair(String),

    #[error("score list is empty")]
    EmptyScores,
    #[error("invalid FMR target {0}: must lie in (0, 1]")]
    InvalidTarget(f64),
    #[error("no morph outcomes to aggregate")]
    EmptyOutcomes,
    #[error("morph `{morph}` has no outcome for matcher `{matcher}`")]
    MatcherSetMismatch { morph: String, matcher: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no latent recorded for utterance `{0}`")]
    MissingLatent(String),

    #[error("histogram range is empty or has no bins")]
    EmptyRange,
    #[error("perplexity {perplexity} too large for {points} points (must be < (N-1)/3)")]
    PerplexityTooLarge { perplexity: f64, points: usize },
    #[error("t-SNE needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("all pairwise distances are zero")]
    DegenerateDistances,
}

impl Error {
    pub fn parse_line(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { at: Location::Line(line), msg: msg.into() }
    }

    pub fn parse_byte(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse { at: Location::Byte(offset), msg: msg.into() }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidRatios(_) | InvalidTarget(_) | InvalidConfig(_) | UnknownSpace(_) | UnknownPair(_) | PerplexityTooLarge { .. } => {
                ErrorClass::Config
            }
            DegenerateVector { .. } | DegenerateDistances | EmptyRange => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
