//! The `.ssir` container: a compressed clip as a file.
//!
//! A container is the trained network plus everything decode needs: audio
//! metadata (rate, length, gain), the encoding and architecture description,
//! and the weight tensors, either quantized to int8 (the default) or as raw
//! `f32`. All integers and floats are little-endian; see
//! `docs/ssir-format.md` for the byte-level layout.
//!
//! Layout summary:
//!
//! ```text
//! magic "SSIR" | version u16 | flags u16 | sample_rate u32 | num_samples u64
//! gain f32 | pe_l u16 | pe_sigma f32 | omega0 f32 | omega f32 | alpha f32
//! shared_count u16, shared widths u16... | siamese_count u16, widths u16...
//! tensors in canonical order:
//!   rank u8, dims u32 x rank,
//!   quantized: scale f32, zero_point i8, codes i8 x len
//!   float:     values f32 x len
//! ```
//!
//! Flags: bit 0 = weights quantized, bit 1 = samples were peak-normalized
//! before training (gain restores the original level either way).

use std::path::Path;

use crate::encoding::PeConfig;
use crate::error::{Error, Result};
use crate::model::{canonical_tensor_shapes, params_match_config, NetConfig, SiameseParams};
use crate::quantizer::{QuantTensor, QuantizedModel};

pub const MAGIC: [u8; 4] = *b"SSIR";
pub const VERSION: u16 = 1;

const FLAG_QUANTIZED: u16 = 1 << 0;
const FLAG_NORMALIZED: u16 = 1 << 1;

/// Everything about a compressed clip except the weights themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerHeader {
    /// Whether the samples were peak-normalized before training.
    pub normalized: bool,
    /// Sample rate the clip was trained at.
    pub sample_rate: u32,
    /// Number of samples the clip had at training time.
    pub num_samples: u64,
    /// Multiplier that restores the original signal level on decode.
    pub gain: f32,
    /// Noise-estimate strength used by the decoder's spectral gate.
    pub alpha: f32,
    /// Encoding and architecture hyperparameters.
    pub cfg: NetConfig,
}

impl ContainerHeader {
    fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if self.cfg.shared.is_empty() && self.cfg.siamese.is_empty() {
            return Err(Error::InvalidArg(
                "container must describe at least one layer".into(),
            ));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidArg("sample rate must be positive".into()));
        }
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return Err(Error::InvalidArg(format!(
                "gain must be positive and finite, got {}",
                self.gain
            )));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidArg(format!(
                "alpha must be positive and finite, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Weight payload in either storage mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    Quantized(QuantizedModel),
    Float(SiameseParams<f32>),
}

/// A decoded (or about-to-be-encoded) `.ssir` file.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: ContainerHeader,
    pub weights: Weights,
}

impl Container {
    pub fn is_quantized(&self) -> bool {
        matches!(self.weights, Weights::Quantized(_))
    }
}

/// Exact byte size of a container for this architecture and storage mode.
pub fn encoded_len(cfg: &NetConfig, quantized: bool) -> usize {
    // Fixed fields through alpha: 4+2+2+4+8+4+2+4+4+4+4 = 42 bytes.
    let mut len = 42 + 2 + 2 * cfg.shared.len() + 2 + 2 * cfg.siamese.len();
    for (_, shape) in canonical_tensor_shapes(cfg) {
        let n: usize = shape.iter().product();
        len += 1 + 4 * shape.len(); // rank + dims
        len += if quantized { 4 + 1 + n } else { 4 * n };
    }
    len
}

/// Serializes a container to bytes.
pub fn encode(container: &Container) -> Result<Vec<u8>> {
    let h = &container.header;
    h.validate()?;

    // The weight payload must chain exactly into the declared architecture.
    let expected = canonical_tensor_shapes(&h.cfg);
    match &container.weights {
        Weights::Quantized(model) => {
            if model.tensors.len() != expected.len() {
                return Err(Error::ShapeChain {
                    index: model.tensors.len().min(expected.len()),
                    detail: format!(
                        "expected {} tensors, found {}",
                        expected.len(),
                        model.tensors.len()
                    ),
                });
            }
            for (i, (t, (label, shape))) in model.tensors.iter().zip(&expected).enumerate() {
                if &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                    return Err(Error::ShapeChain {
                        index: i,
                        detail: format!("{label}: expected shape {shape:?}, got {:?}", t.shape),
                    });
                }
                if !(t.scale.is_finite() && t.scale > 0.0) {
                    return Err(Error::NonFiniteWeight {
                        tensor: format!("{label} (scale {})", t.scale),
                    });
                }
            }
        }
        Weights::Float(params) => {
            params_match_config(params, &h.cfg)?;
            for view in params.tensor_views() {
                if view.data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteWeight { tensor: view.label });
                }
            }
        }
    }

    let quantized = container.is_quantized();
    let mut out = Vec::with_capacity(encoded_len(&h.cfg, quantized));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let mut flags = 0u16;
    if quantized {
        flags |= FLAG_QUANTIZED;
    }
    if h.normalized {
        flags |= FLAG_NORMALIZED;
    }
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&h.sample_rate.to_le_bytes());
    out.extend_from_slice(&h.num_samples.to_le_bytes());
    out.extend_from_slice(&h.gain.to_le_bytes());
    out.extend_from_slice(&(h.cfg.pe.l as u16).to_le_bytes());
    out.extend_from_slice(&h.cfg.pe.sigma.to_le_bytes());
    out.extend_from_slice(&h.cfg.omega0.to_le_bytes());
    out.extend_from_slice(&h.cfg.omega.to_le_bytes());
    out.extend_from_slice(&h.alpha.to_le_bytes());
    for widths in [&h.cfg.shared, &h.cfg.siamese] {
        out.extend_from_slice(&(widths.len() as u16).to_le_bytes());
        for &w in widths.iter() {
            out.extend_from_slice(&(w as u16).to_le_bytes());
        }
    }

    let write_dims = |out: &mut Vec<u8>, shape: &[usize]| {
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    };
    match &container.weights {
        Weights::Quantized(model) => {
            for t in &model.tensors {
                write_dims(&mut out, &t.shape);
                out.extend_from_slice(&t.scale.to_le_bytes());
                out.push(t.zero_point as u8);
                out.extend_from_slice(bytemuck_i8(&t.data));
            }
        }
        Weights::Float(params) => {
            for view in params.tensor_views() {
                write_dims(&mut out, &view.shape);
                for &v in view.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }

    debug_assert_eq!(out.len(), encoded_len(&h.cfg, quantized));
    Ok(out)
}

fn bytemuck_i8(data: &[i8]) -> &[u8] {
    // i8 and u8 have identical layout.
    unsafe { std::slice::from_raw_parts(data.as_ptr() as *const u8, data.len()) }
}

/// Little-endian cursor over container bytes.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(Error::TruncatedPayload)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Parses container bytes, validating structure, shapes, and value sanity.
pub fn decode(bytes: &[u8]) -> Result<Container> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::BadMagic)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let flags = r.u16()?;
    if flags & !(FLAG_QUANTIZED | FLAG_NORMALIZED) != 0 {
        return Err(Error::ContainerFormat(format!(
            "unknown flag bits set: {flags:#06x}"
        )));
    }
    let quantized = flags & FLAG_QUANTIZED != 0;
    let normalized = flags & FLAG_NORMALIZED != 0;
    let sample_rate = r.u32()?;
    let num_samples = r.u64()?;
    let gain = r.f32()?;
    let pe_l = r.u16()? as usize;
    let pe_sigma = r.f32()?;
    let omega0 = r.f32()?;
    let omega = r.f32()?;
    let alpha = r.f32()?;

    let read_widths = |r: &mut Reader| -> Result<Vec<usize>> {
        let count = r.u16()? as usize;
        (0..count)
            .map(|_| {
                let w = r.u16()? as usize;
                if w == 0 {
                    Err(Error::ContainerFormat("zero layer width".into()))
                } else {
                    Ok(w)
                }
            })
            .collect()
    };
    let shared = read_widths(&mut r)?;
    let siamese = read_widths(&mut r)?;

    let header = ContainerHeader {
        normalized,
        sample_rate,
        num_samples,
        gain,
        alpha,
        cfg: NetConfig {
            pe: PeConfig {
                l: pe_l,
                sigma: pe_sigma,
            },
            shared,
            siamese,
            omega0,
            omega,
        },
    };
    header.validate().map_err(|e| match e {
        Error::InvalidArg(msg) => Error::ContainerFormat(msg),
        other => other,
    })?;

    let expected = canonical_tensor_shapes(&header.cfg);
    let read_shape = |r: &mut Reader, i: usize, want: &[usize], label: &str| -> Result<usize> {
        let rank = r.u8()? as usize;
        if rank != want.len() {
            return Err(Error::ShapeChain {
                index: i,
                detail: format!("{label}: expected rank {}, got {rank}", want.len()),
            });
        }
        let mut n = 1usize;
        for &w in want {
            let d = r.u32()? as usize;
            if d != w {
                return Err(Error::ShapeChain {
                    index: i,
                    detail: format!("{label}: expected dim {w}, got {d}"),
                });
            }
            n *= d;
        }
        Ok(n)
    };

    let weights = if quantized {
        let mut tensors = Vec::with_capacity(expected.len());
        for (i, (label, shape)) in expected.iter().enumerate() {
            let n = read_shape(&mut r, i, shape, label)?;
            let scale = r.f32()?;
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::ContainerFormat(format!(
                    "{label}: scale must be positive and finite, got {scale}"
                )));
            }
            let zero_point = r.u8()? as i8;
            let data: Vec<i8> = r.take(n)?.iter().map(|&b| b as i8).collect();
            tensors.push(QuantTensor {
                data,
                shape: shape.clone(),
                scale,
                zero_point,
            });
        }
        Weights::Quantized(QuantizedModel { tensors })
    } else {
        let mut flat: Vec<Vec<f32>> = Vec::with_capacity(expected.len());
        for (i, (label, shape)) in expected.iter().enumerate() {
            let n = read_shape(&mut r, i, shape, label)?;
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                let v = r.f32()?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteWeight {
                        tensor: label.clone(),
                    });
                }
                values.push(v);
            }
            flat.push(values);
        }
        Weights::Float(assemble_params(&header.cfg, flat))
    };

    if r.remaining() != 0 {
        return Err(Error::ContainerFormat(format!(
            "{} trailing bytes after last tensor",
            r.remaining()
        )));
    }

    Ok(Container { header, weights })
}

/// Rebuilds a parameter struct from per-tensor value vectors in canonical
/// order (shapes already validated against the config).
fn assemble_params(cfg: &NetConfig, mut flat: Vec<Vec<f32>>) -> SiameseParams<f32> {
    use ndarray::{Array1, Array2};
    let shapes = cfg.layer_shapes();
    let mut it = flat.drain(..);
    let mut take_seg = |count: usize, seg_shapes: &[(usize, usize)]| {
        (0..count)
            .map(|i| {
                let (o, inp) = seg_shapes[i];
                let w = it.next().expect("validated tensor count");
                let b = it.next().expect("validated tensor count");
                crate::model::LayerParams {
                    weight: Array2::from_shape_vec((o, inp), w).expect("validated shape"),
                    bias: Array1::from_vec(b),
                }
            })
            .collect::<Vec<_>>()
    };
    let shared = take_seg(shapes.shared.len(), &shapes.shared);
    let head0 = take_seg(shapes.head.len(), &shapes.head);
    let head1 = if cfg.is_siamese() {
        take_seg(shapes.head.len(), &shapes.head)
    } else {
        Vec::new()
    };
    SiameseParams {
        shared,
        head0,
        head1,
    }
}

/// Writes a container to disk, returning the byte count.
pub fn encode_file(container: &Container, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let bytes = encode(container)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

/// Reads and parses a container from disk.
pub fn decode_file(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init;
    use crate::quantizer::quantize;

    fn tiny_cfg() -> NetConfig {
        NetConfig {
            pe: PeConfig { l: 2, sigma: 2.0 },
            shared: vec![3],
            siamese: vec![2],
            omega0: 100.0,
            omega: 100.0,
        }
    }

    fn tiny_container(quantized: bool) -> Container {
        let cfg = tiny_cfg();
        let params = init::<f32>(&cfg, 42).unwrap();
        let weights = if quantized {
            Weights::Quantized(quantize(&params).unwrap())
        } else {
            Weights::Float(params)
        };
        Container {
            header: ContainerHeader {
                normalized: true,
                sample_rate: 8000,
                num_samples: 16,
                gain: 1.25,
                alpha: 2.0,
                cfg,
            },
            weights,
        }
    }

    #[test]
    fn quantized_round_trip_is_lossless_at_the_container_level() {
        let c = tiny_container(true);
        let bytes = encode(&c).unwrap();
        assert_eq!(bytes.len(), encoded_len(&c.header.cfg, true));
        let back = decode(&bytes).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn float_round_trip_is_bit_exact() {
        let c = tiny_container(false);
        let bytes = encode(&c).unwrap();
        assert_eq!(bytes.len(), encoded_len(&c.header.cfg, false));
        let back = decode(&bytes).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn quantized_mode_is_roughly_four_times_smaller() {
        // Weight-dominated architectures approach the 1:4 payload ratio of
        // int8 vs f32 storage.
        let cfg = NetConfig::default();
        let q = encoded_len(&cfg, true) as f64;
        let f = encoded_len(&cfg, false) as f64;
        assert!(q / f < 0.27, "ratio {}", q / f);
        assert!(q / f > 0.24, "ratio {}", q / f);
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let mut bytes = encode(&tiny_container(true)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic)));

        let mut bytes = encode(&tiny_container(true)).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn unknown_flag_bits_are_rejected() {
        let mut bytes = encode(&tiny_container(true)).unwrap();
        bytes[6] |= 0x04;
        assert!(matches!(decode(&bytes), Err(Error::ContainerFormat(_))));
    }

    #[test]
    fn every_truncation_errors_instead_of_panicking() {
        let bytes = encode(&tiny_container(true)).unwrap();
        for cut in 0..bytes.len() {
            assert!(
                decode(&bytes[..cut]).is_err(),
                "truncation at {cut} bytes must fail"
            );
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = encode(&tiny_container(true)).unwrap();
        bytes.push(0);
        match decode(&bytes) {
            Err(Error::ContainerFormat(msg)) => assert!(msg.contains("trailing")),
            other => panic!("expected trailing-bytes error, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_structure_is_diagnosed() {
        // Zero width in the shared list.
        let mut bytes = encode(&tiny_container(true)).unwrap();
        bytes[44] = 0;
        bytes[45] = 0;
        assert!(decode(&bytes).is_err());

        // Broken rank byte on the first tensor.
        let mut bytes = encode(&tiny_container(true)).unwrap();
        let header_len = 42 + 2 + 2 + 2 + 2; // one shared width, one siamese width
        bytes[header_len] = 7;
        assert!(matches!(
            decode(&bytes),
            Err(Error::ShapeChain { index: 0, .. })
        ));
    }

    #[test]
    fn float_mode_rejects_nan_payload() {
        let c = tiny_container(false);
        let mut bytes = encode(&c).unwrap();
        // First float value sits right after the header and the first
        // tensor's rank byte + two u32 dims.
        let header_len = 42 + 2 + 2 + 2 + 2;
        let off = header_len + 1 + 8;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::NonFiniteWeight { .. })));
    }

    #[test]
    fn encode_rejects_weights_that_do_not_match_the_config() {
        let mut c = tiny_container(true);
        if let Weights::Quantized(m) = &mut c.weights {
            m.tensors.pop();
        }
        assert!(matches!(encode(&c), Err(Error::ShapeChain { .. })));

        let mut c = tiny_container(false);
        c.header.cfg.shared = vec![5];
        assert!(encode(&c).is_err());
    }

    #[test]
    fn encode_rejects_empty_architectures_and_bad_metadata() {
        let mut c = tiny_container(true);
        c.header.cfg.shared.clear();
        c.header.cfg.siamese.clear();
        assert!(encode(&c).is_err());

        let mut c = tiny_container(true);
        c.header.gain = 0.0;
        assert!(encode(&c).is_err());

        let mut c = tiny_container(true);
        c.header.sample_rate = 0;
        assert!(encode(&c).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.ssir");
        let c = tiny_container(true);
        let written = encode_file(&c, &path).unwrap();
        assert_eq!(written, encoded_len(&c.header.cfg, true) as u64);
        let back = decode_file(&path).unwrap();
        assert_eq!(back, c);
    }
}
