//! Neural audio codec built around a twin-head sine-activated MLP.
//!
//! A clip is compressed by overfitting a small network to the mapping from
//! normalized time to amplitude: a shared sine-MLP trunk feeds two
//! independently initialized head stacks that each reconstruct the same
//! signal. The weights (quantized to int8 by default) *are* the compressed
//! file. On decode, the disagreement between the two heads doubles as a
//! noise estimate that drives a spectral gate over the reconstruction.
//!
//! Modules follow the pipeline order:
//!
//! * [`audio_io`] — WAV in/out, mono mixdown, crop/resample/normalize.
//! * [`encoding`] — time grid and Fourier positional encoding.
//! * [`model`] — network configuration, initialization, and inference.
//! * [`trainer`] — MSE loss, analytic gradients, and the Adam loop.
//! * [`quantizer`] — per-tensor affine int8 quantization.
//! * [`codec`] — the `.ssir` container format.
//! * [`spectral`] — STFT/ISTFT, the spectral gate, and log-mel rendering.
//! * [`metrics`] — SNR, log-spectral distance, compression ratio.
//! * [`cli`] — the `ssir` command-line front end.

pub mod audio_io;
pub mod cli;
pub mod codec;
pub mod encoding;
pub mod error;
pub mod metrics;
pub mod model;
pub mod quantizer;
pub mod spectral;
pub mod trainer;

pub use error::{Error, Result};

/// Scalar type for network math.
///
/// Production paths run `f32`; tests instantiate `f64` so analytic gradients
/// can be compared against finite differences well below `f32` noise.
pub trait Real:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
{
    /// Lossless widening to `f64` (both instantiations widen exactly).
    fn to_f64(self) -> f64;
    /// Nearest representable value to `v`.
    fn from_f64(v: f64) -> Self;
}

impl Real for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}
