use std::fmt;
use std::path::PathBuf;

/// Error type shared by every module in the crate.
#[derive(Debug)]
pub enum Error {
    /// An operation received tensors whose shapes do not satisfy its contract.
    /// `detail` names the offending dimension(s).
    ShapeMismatch { op: &'static str, detail: String },
    /// A value that must be finite was NaN or infinite.
    NonFinite { context: String },
    /// `backward` was called on a tensor that is not a scalar.
    NonScalarLoss { elements: usize },
    /// A configuration value violates its documented invariant.
    InvalidConfig(String),
    /// Landmark set is unusable (too few contour points, out-of-range coordinates).
    InvalidLandmarks(String),
    /// Metric rate computation is undefined because one class has no samples.
    MissingClass { class: &'static str },
    /// An operation that requires at least one element received none.
    EmptyInput(&'static str),
    /// A video does not contain enough frames for a single sequence.
    TooShort { frames: usize, needed: usize },
    /// Underlying filesystem failure, with the path that produced it.
    Io { path: PathBuf, source: std::io::Error },
    /// A file exists but its contents are not in the expected format.
    Format { path: PathBuf, detail: String },
    /// Checkpoint file does not start with the expected magic bytes.
    CheckpointBadMagic,
    /// Checkpoint container version is not supported by this build.
    CheckpointVersion { found: u32, supported: u32 },
    /// Checkpoint file ends before all declared payload bytes.
    CheckpointTruncated { expected: usize, found: usize },
    /// A tensor payload failed its integrity check.
    CheckpointCrc { name: String },
    /// Checkpoint was written with a different element type than requested.
    CheckpointDtype { found: String, expected: String },
    /// A gradient or loss value became non-finite during optimization.
    NumericFailure { context: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, detail } => write!(f, "shape mismatch in {op}: {detail}"),
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::NonScalarLoss { elements } => {
                write!(f, "backward requires a scalar loss, got {elements} elements")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::InvalidLandmarks(msg) => write!(f, "invalid landmarks: {msg}"),
            Error::MissingClass { class } => {
                write!(f, "cannot compute rates: no {class} samples present")
            }
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::TooShort { frames, needed } => {
                write!(f, "too short: {frames} frames, need at least {needed}")
            }
            Error::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
            Error::Format { path, detail } => {
                write!(f, "malformed file {}: {detail}", path.display())
            }
            Error::CheckpointBadMagic => write!(f, "checkpoint: bad magic bytes"),
            Error::CheckpointVersion { found, supported } => {
                write!(f, "checkpoint: unsupported version {found} (supported: {supported})")
            }
            Error::CheckpointTruncated { expected, found } => {
                write!(f, "checkpoint: truncated payload, expected {expected} bytes, found {found}")
            }
            Error::CheckpointCrc { name } => {
                write!(f, "checkpoint: payload integrity failure for tensor '{name}'")
            }
            Error::CheckpointDtype { found, expected } => {
                write!(f, "checkpoint: element type is {found}, expected {expected}")
            }
            Error::NumericFailure { context } => write!(f, "numeric failure: {context}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
