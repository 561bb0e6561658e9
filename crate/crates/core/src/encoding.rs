//! Time coordinates and the Fourier positional encoding fed to the network.
//!
//! Sample index `i` of an `n`-sample clip maps to a normalized time in
//! `[-1, 1]`, which is then lifted to a `2L + 1`-dimensional feature vector:
//! the raw coordinate followed by sine/cosine pairs at geometrically spaced
//! frequencies `sigma^0 * pi, sigma^1 * pi, ..., sigma^(L-1) * pi`.

use ndarray::Array2;

use crate::Real;

/// Positional-encoding shape: `l` sin/cos pairs with frequency base `sigma`.
///
/// `l = 0` disables the encoding entirely; the network then sees only the
/// raw time coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeConfig {
    /// Number of sin/cos frequency pairs.
    pub l: usize,
    /// Geometric frequency growth factor.
    pub sigma: f32,
}

impl Default for PeConfig {
    fn default() -> Self {
        PeConfig { l: 16, sigma: 2.0 }
    }
}

impl PeConfig {
    /// Dimension of the encoded vector: raw coordinate plus `l` pairs.
    pub fn dims(&self) -> usize {
        2 * self.l + 1
    }
}

/// Normalized time coordinates for an `n`-sample clip.
///
/// Endpoints map exactly: the first sample to `-1`, the last to `+1`. A
/// single-sample clip sits at `0`; `n = 0` yields an empty grid.
pub fn time_grid<F: Real>(n: usize) -> Vec<F> {
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![F::zero()];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| F::from_f64(2.0 * (i as f64) / denom - 1.0))
        .collect()
}

/// Encodes one time coordinate into `out`, which must hold `cfg.dims()`
/// values: `[t, sin(pi t), cos(pi t), sin(sigma pi t), cos(sigma pi t), ...]`.
pub fn encode_into<F: Real>(t: F, cfg: &PeConfig, out: &mut [F]) {
    debug_assert_eq!(out.len(), cfg.dims());
    out[0] = t;
    let sigma = F::from_f64(cfg.sigma as f64);
    let mut freq = F::from_f64(std::f64::consts::PI);
    for k in 0..cfg.l {
        let (s, c) = (freq * t).sin_cos();
        out[1 + 2 * k] = s;
        out[2 + 2 * k] = c;
        freq *= sigma;
    }
}

/// Encodes one time coordinate into a fresh vector. See [`encode_into`].
pub fn positional_encode<F: Real>(t: F, cfg: &PeConfig) -> Vec<F> {
    let mut out = vec![F::zero(); cfg.dims()];
    encode_into(t, cfg, &mut out);
    out
}

/// Encodes a batch of time coordinates into a `(times.len(), cfg.dims())`
/// matrix, one encoded coordinate per row.
pub fn encode_batch<F: Real>(times: &[F], cfg: &PeConfig) -> Array2<F> {
    let dims = cfg.dims();
    let mut out = Array2::zeros((times.len(), dims));
    for (i, &t) in times.iter().enumerate() {
        let mut row = out.row_mut(i);
        encode_into(t, cfg, row.as_slice_mut().expect("row is contiguous"));
    }
    out
}
