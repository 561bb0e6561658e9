//! Per-tensor affine int8 quantization of trained weights.
//!
//! Each tensor is stored as int8 codes plus one `f32` scale and one `i8`
//! zero point, reconstructing as `scale * (q - zero_point)`. The
//! quantization range is the tensor's value range widened to include zero,
//! which keeps the affine map inside the code range (no saturation of real
//! values) and makes all-positive or all-negative tensors behave sensibly.
//! A constant tensor is stored exactly: scale `|c|` with a single code of
//! `sign(c)` (scale 1, code 0 when the constant is zero).
//!
//! Worst-case reconstruction error for a non-constant tensor is half a step
//! (`scale / 2`) plus one float rounding, and re-quantizing a reconstruction
//! reproduces the same codes, so repeated encode/decode cycles are stable.

use crate::error::{Error, Result};
use crate::model::{canonical_tensor_shapes, NetConfig, SiameseParams};
use ndarray::{Array1, Array2};

/// One tensor in int8 form. `data` is row-major in `shape` order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub data: Vec<i8>,
    pub shape: Vec<usize>,
    pub scale: f32,
    pub zero_point: i8,
}

impl QuantTensor {
    /// Number of stored values.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Reconstructs one code.
    pub fn dequant_value(&self, q: i8) -> f32 {
        self.scale * (q as i32 - self.zero_point as i32) as f32
    }

    /// Reconstructs every value.
    pub fn dequant_all(&self) -> Vec<f32> {
        self.data.iter().map(|&q| self.dequant_value(q)).collect()
    }
}

/// A complete parameter set in int8 form, tensors in canonical order
/// (per segment, per layer: weight then bias).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub tensors: Vec<QuantTensor>,
}

impl QuantizedModel {
    /// Rebuilds float parameters, validating the tensor list against `cfg`.
    pub fn dequantize(&self, cfg: &NetConfig) -> Result<SiameseParams<f32>> {
        dequantize(self, cfg)
    }
}

/// Quantizes one value array. `shape` is carried through for bookkeeping and
/// must multiply out to `values.len()`.
pub fn quantize_values(values: &[f32], shape: Vec<usize>) -> QuantTensor {
    debug_assert_eq!(shape.iter().product::<usize>(), values.len());
    let (lo, hi) = values.iter().fold(
        (f32::INFINITY, f32::NEG_INFINITY),
        |(lo, hi), &v| (lo.min(v), hi.max(v)),
    );

    if values.is_empty() || lo == hi {
        // Constant tensor: representable exactly with one code.
        let c = if values.is_empty() { 0.0 } else { lo };
        let (scale, code) = if c == 0.0 {
            (1.0, 0i8)
        } else {
            (c.abs(), if c > 0.0 { 1i8 } else { -1i8 })
        };
        return QuantTensor {
            data: vec![code; values.len()],
            shape,
            scale,
            zero_point: 0,
        };
    }

    // Widen the range to include zero, then spread it across the 256 codes.
    let lo = lo.min(0.0);
    let hi = hi.max(0.0);
    let scale = ((hi as f64 - lo as f64) / 255.0) as f32;
    let s = scale as f64;
    let zero_point = (-128.0 - lo as f64 / s)
        .round_ties_even()
        .clamp(-128.0, 127.0) as i8;
    let zp = zero_point as f64;
    let data = values
        .iter()
        .map(|&v| {
            (v as f64 / s + zp)
                .round_ties_even()
                .clamp(-128.0, 127.0) as i8
        })
        .collect();
    QuantTensor {
        data,
        shape,
        scale,
        zero_point,
    }
}

/// Quantizes every tensor of a parameter set in canonical order. Fails if
/// any tensor contains NaN or infinity.
pub fn quantize(params: &SiameseParams<f32>) -> Result<QuantizedModel> {
    let mut tensors = Vec::new();
    for view in params.tensor_views() {
        if view.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteWeight { tensor: view.label });
        }
        tensors.push(quantize_values(view.data, view.shape));
    }
    Ok(QuantizedModel { tensors })
}

/// Rebuilds float parameters from int8 tensors, checking that the sequence
/// chains exactly into the architecture `cfg` declares.
pub fn dequantize(model: &QuantizedModel, cfg: &NetConfig) -> Result<SiameseParams<f32>> {
    cfg.validate()?;
    let expected = canonical_tensor_shapes(cfg);
    if model.tensors.len() != expected.len() {
        return Err(Error::ShapeChain {
            index: model.tensors.len().min(expected.len()),
            detail: format!(
                "expected {} tensors for this architecture, found {}",
                expected.len(),
                model.tensors.len()
            ),
        });
    }
    for (i, (t, (label, shape))) in model.tensors.iter().zip(&expected).enumerate() {
        if &t.shape != shape {
            return Err(Error::ShapeChain {
                index: i,
                detail: format!("{label}: expected shape {shape:?}, got {:?}", t.shape),
            });
        }
        if t.data.len() != shape.iter().product::<usize>() {
            return Err(Error::ShapeChain {
                index: i,
                detail: format!(
                    "{label}: {} values do not fill shape {shape:?}",
                    t.data.len()
                ),
            });
        }
    }

    // Tensors come in (weight, bias) pairs per layer; segment sizes follow
    // from the config.
    let mut it = model.tensors.iter();
    let mut take_layers = |count: usize| -> Vec<crate::model::LayerParams<f32>> {
        (0..count)
            .map(|_| {
                let w = it.next().expect("validated length");
                let b = it.next().expect("validated length");
                crate::model::LayerParams {
                    weight: Array2::from_shape_vec((w.shape[0], w.shape[1]), w.dequant_all())
                        .expect("validated shape"),
                    bias: Array1::from_vec(b.dequant_all()),
                }
            })
            .collect()
    };

    let shared = take_layers(cfg.shared.len());
    let head_len = cfg.siamese.len() + 1;
    let head0 = take_layers(head_len);
    let head1 = if cfg.is_siamese() {
        take_layers(head_len)
    } else {
        Vec::new()
    };
    Ok(SiameseParams {
        shared,
        head0,
        head1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init, param_count};
    use proptest::prelude::*;

    fn f32_ulp(x: f32) -> f32 {
        let x = x.abs().max(f32::MIN_POSITIVE);
        f32::from_bits(x.to_bits() + 1) - x
    }

    #[test]
    fn full_range_tensor_uses_the_documented_scale() {
        let q = quantize_values(&[-1.0, 1.0], vec![2]);
        assert_eq!(q.scale, 2.0f32 / 255.0);
        for (&v, &code) in [-1.0f32, 1.0].iter().zip(&q.data) {
            let err = (q.dequant_value(code) - v).abs();
            assert!(err <= q.scale / 2.0 + f32_ulp(v));
        }
    }

    #[test]
    fn constant_tensor_reconstructs_exactly() {
        let q = quantize_values(&[0.5, 0.5, 0.5], vec![3]);
        assert!(q.data.iter().all(|&c| c == q.data[0]));
        for &c in &q.data {
            assert_eq!(q.dequant_value(c), 0.5);
        }

        let qn = quantize_values(&[-0.75], vec![1]);
        assert_eq!(qn.dequant_value(qn.data[0]), -0.75);
    }

    #[test]
    fn zero_tensor_is_scale_one_code_zero() {
        let q = quantize_values(&[0.0; 4], vec![4]);
        assert_eq!(q.scale, 1.0);
        assert_eq!(q.zero_point, 0);
        assert!(q.data.iter().all(|&c| c == 0));
        assert_eq!(q.dequant_value(0), 0.0);
    }

    #[test]
    fn one_sided_tensors_keep_zero_representable() {
        // All-positive values: zero must still map to a valid code so the
        // affine reconstruction cannot drift.
        let q = quantize_values(&[0.3, 0.8], vec![2]);
        assert_eq!(q.zero_point, -128, "range widens down to zero");
        for &v in &[0.3f32, 0.8] {
            let code = ((v as f64 / q.scale as f64) + q.zero_point as f64)
                .round_ties_even() as i8;
            assert!((q.dequant_value(code) - v).abs() <= q.scale / 2.0 + f32_ulp(v));
        }

        let q = quantize_values(&[-0.9, -0.1], vec![2]);
        assert_eq!(q.zero_point, 127, "range widens up to zero");
    }

    #[test]
    fn dense_grid_meets_the_half_step_bound() {
        let values: Vec<f32> = (0..2001).map(|i| -1.0 + i as f32 * 0.001).collect();
        let q = quantize_values(&values, vec![values.len()]);
        for (&v, &c) in values.iter().zip(&q.data) {
            let err = (q.dequant_value(c) - v).abs();
            assert!(
                err <= q.scale / 2.0 + f32_ulp(v.abs().max(q.scale)),
                "v={v} err={err} scale={}",
                q.scale
            );
        }
    }

    #[test]
    fn requantizing_a_reconstruction_is_stable() {
        let values: Vec<f32> = (0..500)
            .map(|i| ((i as f32 * 0.137).sin() * 0.8).powi(3))
            .collect();
        let q1 = quantize_values(&values, vec![values.len()]);
        let q2 = quantize_values(&q1.dequant_all(), vec![values.len()]);
        assert_eq!(q1.data, q2.data);
        assert_eq!(q1.zero_point, q2.zero_point);
        let scale_drift = (q1.scale - q2.scale).abs();
        assert!(scale_drift <= f32_ulp(q1.scale));
    }

    #[test]
    fn params_round_trip_through_int8() {
        let cfg = NetConfig {
            shared: vec![8],
            siamese: vec![4],
            ..NetConfig::default()
        };
        let params = init::<f32>(&cfg, 5).unwrap();
        let model = quantize(&params).unwrap();
        assert_eq!(model.tensors.len(), 2 * (1 + 2 + 2)); // weight+bias per layer
        let total: usize = model.tensors.iter().map(|t| t.len()).sum();
        assert_eq!(total, param_count(&cfg));

        let back = dequantize(&model, &cfg).unwrap();
        for (orig, rec) in params.tensor_views().iter().zip(back.tensor_views()) {
            assert_eq!(orig.shape, rec.shape);
            let t = &model.tensors[params
                .tensor_views()
                .iter()
                .position(|v| v.label == orig.label)
                .unwrap()];
            for (&o, &r) in orig.data.iter().zip(rec.data) {
                assert!((o - r).abs() <= t.scale / 2.0 + f32_ulp(o.abs().max(t.scale)));
            }
        }
    }

    #[test]
    fn non_finite_weights_are_rejected_by_name() {
        let cfg = NetConfig {
            shared: vec![2],
            siamese: vec![],
            ..NetConfig::default()
        };
        let mut params = init::<f32>(&cfg, 0).unwrap();
        params.head0[0].weight[(0, 0)] = f32::NAN;
        match quantize(&params) {
            Err(Error::NonFiniteWeight { tensor }) => {
                assert_eq!(tensor, "head0.0.weight");
            }
            other => panic!("expected non-finite rejection, got {other:?}"),
        }
    }

    #[test]
    fn dequantize_rejects_tensor_lists_that_do_not_chain() {
        let cfg = NetConfig {
            shared: vec![4],
            siamese: vec![2],
            ..NetConfig::default()
        };
        let params = init::<f32>(&cfg, 1).unwrap();
        let model = quantize(&params).unwrap();

        let mut short = model.clone();
        short.tensors.pop();
        assert!(matches!(
            dequantize(&short, &cfg),
            Err(Error::ShapeChain { .. })
        ));

        let mut bent = model.clone();
        bent.tensors[2].shape = vec![3, 3];
        bent.tensors[2].data = vec![0; 9];
        match dequantize(&bent, &cfg) {
            Err(Error::ShapeChain { index: 2, .. }) => {}
            other => panic!("expected shape-chain break at tensor 2, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn reconstruction_error_is_bounded(values in proptest::collection::vec(-10.0f32..10.0, 1..64)) {
            let q = quantize_values(&values, vec![values.len()]);
            prop_assert!(q.scale > 0.0);
            for (&v, &c) in values.iter().zip(&q.data) {
                let err = (q.dequant_value(c) - v).abs();
                prop_assert!(err <= q.scale / 2.0 + f32_ulp(v.abs().max(q.scale)));
            }
        }

        #[test]
        fn requantization_is_idempotent(values in proptest::collection::vec(-3.0f32..3.0, 1..64)) {
            let q1 = quantize_values(&values, vec![values.len()]);
            let q2 = quantize_values(&q1.dequant_all(), vec![values.len()]);
            prop_assert_eq!(&q1.data, &q2.data);
        }
    }
}
