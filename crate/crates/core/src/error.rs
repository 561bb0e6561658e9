//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants are grouped by
//! failure class so the CLI can map them onto distinct exit codes: I/O,
//! malformed input files, invalid arguments, numeric failures, and corrupt
//! containers.

use std::path::PathBuf;

use thiserror::Error;

/// All errors produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Underlying filesystem failure, tagged with the offending path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Structurally invalid RIFF/WAVE data.
    #[error("malformed wav: {0}")]
    WavFormat(String),

    /// Well-formed WAV in an encoding we do not decode.
    #[error("unsupported wav encoding: format tag {tag}, {bits} bits per sample")]
    UnsupportedWavCodec { tag: u16, bits: u16 },

    /// Peak normalization asked of an all-zero clip.
    #[error("clip is identically zero; peak normalization is undefined")]
    AllZeroClip,

    /// A caller-supplied value is out of range or unparseable.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Tensor does not have the shape the surrounding network requires.
    #[error("shape mismatch at layer {layer}: expected {expected}, got {got}")]
    ShapeMismatch {
        layer: usize,
        expected: String,
        got: String,
    },

    /// An operation that needs at least one sample received none.
    #[error("empty batch")]
    EmptyBatch,

    /// Paired slices whose lengths must agree do not.
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// Training loss became NaN or infinite.
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    /// A weight or bias tensor contains NaN or infinity.
    #[error("non-finite value in tensor {tensor}")]
    NonFiniteWeight { tensor: String },

    /// File does not start with the container magic.
    #[error("not an ssir container (bad magic)")]
    BadMagic,

    /// Container written by an incompatible format revision.
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),

    /// Container ends before its declared contents do.
    #[error("truncated container payload")]
    TruncatedPayload,

    /// Container field is self-inconsistent or has trailing garbage.
    #[error("corrupt container: {0}")]
    ContainerFormat(String),

    /// Stored tensor list does not chain into the declared architecture.
    #[error("tensor {index} breaks the shape chain: {detail}")]
    ShapeChain { index: usize, detail: String },

    /// STFT window/hop pair that overlap-add cannot invert.
    #[error("hop {hop} is not compatible with window {n_fft} for overlap-add inversion")]
    NonCola { n_fft: usize, hop: usize },

    /// SNR against an all-zero reference is undefined.
    #[error("reference signal is identically zero")]
    AllZeroReference,
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps an I/O error with the path that produced it.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
