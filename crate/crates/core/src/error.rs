use crate::registration::SimilarityTransform;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised while parsing a PGM stream.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PgmError {
    #[error("bad magic {found:?}, expected \"P2\" or \"P5\"")]
    BadMagic { found: String },
    #[error("malformed header token {token:?} at byte {offset}")]
    BadHeaderToken { token: String, offset: usize },
    #[error("header ended at byte {offset} while reading {field}")]
    TruncatedHeader { field: &'static str, offset: usize },
    #[error("maxval {maxval} at byte {offset} is not in 1..=255")]
    UnsupportedMaxval { maxval: u32, offset: usize },
    #[error("zero image dimension {width}x{height}")]
    ZeroDimension { width: usize, height: usize },
    #[error("payload truncated at byte {offset}: expected {expected} samples, got {got}")]
    TruncatedPayload {
        offset: usize,
        expected: usize,
        got: usize,
    },
    #[error("sample {value} at byte {offset} exceeds maxval {maxval}")]
    SampleOutOfRange {
        value: u32,
        maxval: u32,
        offset: usize,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },
    #[error("registration failed: {reason} (last iterate {last:?})")]
    EstimationFailed {
        reason: String,
        last: SimilarityTransform,
    },
    #[error("registration of frame {frame} failed: {source}")]
    FrameRegistration {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("image {width}x{height} is too small; need at least {min}x{min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("low-resolution footprint at ({x:.3}, {y:.3}) leaves the image")]
    FootprintOutside { x: f64, y: f64 },
    #[error("kernel width undefined: kernel(0) = {value}")]
    UndefinedWidth { value: f64 },
    #[error("training failed: {0}")]
    TrainingFailed(String),
    #[error("filter design failed: {0}")]
    DesignFailed(String),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("{what} parse error at line {line}: {msg}")]
    Parse {
        what: &'static str,
        line: usize,
        msg: String,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sigma {sigma}: {source}")]
    AtSigma {
        sigma: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(what: &'static str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            what,
            line,
            msg: msg.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
