//! Reconstruction quality measures and the noise injector used by demos.
//!
//! All metrics accumulate in `f64` regardless of how the signals were
//! produced. Signal-to-noise ratio treats the first argument as ground
//! truth; a bit-exact reconstruction reports `+inf` dB rather than an
//! error so callers can format it as a sentinel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{stft_raw, StftConfig, DB_FLOOR};

/// Bundle of the standard quality measures for one reconstruction.
#[derive(Debug, Clone, Serialize)]
pub struct EvalResult {
    /// Mean squared sample error.
    pub mse: f64,
    /// Signal-to-noise ratio in dB (`+inf` for an exact match).
    pub snr_db: f64,
    /// Mean log-spectral distance in dB.
    pub lsd_db: f64,
    /// Encoded size over source size, when an encoded file is in play.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compression_ratio: Option<f64>,
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

/// Mean squared error between two equal-length signals.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(sum(ref^2) / sum((ref - test)^2))` in dB.
///
/// An all-zero reference is rejected; a zero-error reconstruction yields
/// `+inf`.
pub fn snr_db(reference: &[f64], test: &[f64]) -> Result<f64> {
    check_pair(reference, test)?;
    let signal: f64 = reference.iter().map(|x| x * x).sum();
    if signal == 0.0 {
        return Err(Error::AllZeroReference);
    }
    let err: f64 = reference
        .iter()
        .zip(test)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / err).log10())
}

/// Log-spectral distance: for each frame, the RMS over frequency bins of
/// the dB magnitude difference (floored at [`DB_FLOOR`]), averaged over
/// frames.
pub fn lsd_db(reference: &[f64], test: &[f64], cfg: &StftConfig) -> Result<f64> {
    check_pair(reference, test)?;
    let a = stft_raw(reference, cfg)?;
    let b = stft_raw(test, cfg)?;
    let db = |c: &num_complex::Complex<f64>| (20.0 * c.norm().log10()).max(DB_FLOOR);

    let bins = a.nrows();
    let frames = a.ncols();
    let mut total = 0.0;
    for f in 0..frames {
        let mut sq = 0.0;
        for k in 0..bins {
            let d = db(&a[(k, f)]) - db(&b[(k, f)]);
            sq += d * d;
        }
        total += (sq / bins as f64).sqrt();
    }
    Ok(total / frames as f64)
}

/// Encoded bytes over source bytes; < 1 means the encoding is smaller.
pub fn compression_ratio(encoded_bytes: u64, source_bytes: u64) -> Result<f64> {
    if source_bytes == 0 {
        return Err(Error::InvalidArg("source size must be nonzero".into()));
    }
    Ok(encoded_bytes as f64 / source_bytes as f64)
}

/// All three quality measures at once (ratio left unset).
pub fn evaluate(reference: &[f64], test: &[f64], cfg: &StftConfig) -> Result<EvalResult> {
    Ok(EvalResult {
        mse: mse(reference, test)?,
        snr_db: snr_db(reference, test)?,
        lsd_db: lsd_db(reference, test, cfg)?,
        compression_ratio: None,
    })
}

/// Adds seeded white Gaussian noise of the given variance. Variance zero
/// returns the input unchanged.
pub fn add_noise(samples: &[f64], variance: f64, seed: u64) -> Result<Vec<f64>> {
    if !(variance.is_finite() && variance >= 0.0) {
        return Err(Error::InvalidArg(format!(
            "noise variance must be finite and nonnegative, got {variance}"
        )));
    }
    if variance == 0.0 {
        return Ok(samples.to_vec());
    }
    let normal = Normal::new(0.0, variance.sqrt())
        .map_err(|e| Error::InvalidArg(format!("bad noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(samples.iter().map(|&s| s + normal.sample(&mut rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mse_matches_hand_computation() {
        let a = [1.0, 2.0, 3.0];
        let b = [1.0, 0.0, 6.0];
        // (0 + 4 + 9) / 3
        assert!((mse(&a, &b).unwrap() - 13.0 / 3.0).abs() < 1e-15);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert!(mse(&a, &b[..2]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn snr_reports_known_ratios() {
        // Error energy is a tenth of signal energy: exactly 10 dB.
        let reference = [2.0, 0.0, 0.0, 0.0];
        let test = [2.0 - (0.4f64).sqrt(), 0.0, 0.0, 0.0];
        assert!((snr_db(&reference, &test).unwrap() - 10.0).abs() < 1e-12);

        assert_eq!(snr_db(&reference, &reference).unwrap(), f64::INFINITY);
        assert!(matches!(
            snr_db(&[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::AllZeroReference)
        ));
    }

    #[test]
    fn snr_drops_as_noise_grows() {
        let reference: Vec<f64> = (0..256).map(|i| (i as f64 * 0.1).sin()).collect();
        let small: Vec<f64> = reference.iter().map(|v| v + 0.01).collect();
        let large: Vec<f64> = reference.iter().map(|v| v + 0.1).collect();
        let s = snr_db(&reference, &small).unwrap();
        let l = snr_db(&reference, &large).unwrap();
        assert!((s - l - 20.0).abs() < 1e-9, "10x amplitude = 20 dB: {s} vs {l}");
    }

    #[test]
    fn lsd_is_zero_for_identical_signals() {
        let x: Vec<f64> = (0..4096).map(|i| (i as f64 * 0.01).sin()).collect();
        let cfg = StftConfig::default();
        assert_eq!(lsd_db(&x, &x, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn lsd_sees_a_constant_gain_as_constant_decibels() {
        // Doubling every sample doubles every spectral magnitude, so the
        // distance must be 20 log10(2) everywhere (no bin is near the
        // floor for broadband noise).
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..8192).map(|_| rng.random_range(-0.5..0.5)).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let cfg = StftConfig::default();
        let expected = 20.0 * 2f64.log10();
        let got = lsd_db(&x, &y, &cfg).unwrap();
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    }

    #[test]
    fn compression_ratio_is_encoded_over_source() {
        assert_eq!(compression_ratio(1000, 4000).unwrap(), 0.25);
        assert!(compression_ratio(10, 0).is_err());
    }

    #[test]
    fn evaluate_bundles_all_measures() {
        let x: Vec<f64> = (0..4096).map(|i| (i as f64 * 0.02).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 1e-4).collect();
        let r = evaluate(&x, &y, &StftConfig::default()).unwrap();
        assert!(r.mse > 0.0 && r.snr_db.is_finite() && r.lsd_db > 0.0);
        assert!(r.compression_ratio.is_none());
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("compression_ratio"), "unset ratio is omitted");
    }

    #[test]
    fn add_noise_is_seeded_and_calibrated() {
        let silent = vec![0.0f64; 100_000];
        let a = add_noise(&silent, 1e-3, 42).unwrap();
        let b = add_noise(&silent, 1e-3, 42).unwrap();
        let c = add_noise(&silent, 1e-3, 43).unwrap();
        assert_eq!(a, b, "same seed, same noise");
        assert_ne!(a, c, "different seed, different noise");

        let mean: f64 = a.iter().sum::<f64>() / a.len() as f64;
        let var: f64 = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 1e-3);
        assert!((var - 1e-3).abs() / 1e-3 < 0.05, "variance {var}");
    }

    #[test]
    fn add_noise_zero_variance_is_identity() {
        let x = [0.5, -0.25, 0.125];
        assert_eq!(add_noise(&x, 0.0, 7).unwrap(), x.to_vec());
        assert!(add_noise(&x, -1.0, 7).is_err());
        assert!(add_noise(&x, f64::NAN, 7).is_err());
    }

    proptest! {
        #[test]
        fn mse_is_symmetric_and_nonnegative(
            pair in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..64)
        ) {
            let a: Vec<f64> = pair.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pair.iter().map(|p| p.1).collect();
            let ab = mse(&a, &b).unwrap();
            let ba = mse(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn snr_is_finite_for_distinct_signals(
            reference in proptest::collection::vec(0.01f64..1.0, 1..64),
            delta in 0.001f64..0.5,
        ) {
            let test: Vec<f64> = reference.iter().map(|v| v + delta).collect();
            let s = snr_db(&reference, &test).unwrap();
            prop_assert!(s.is_finite());
        }
    }
}
