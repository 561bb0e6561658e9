//! Network definition: configuration, initialization, and inference.
//!
//! The network is a sine-activated MLP with a shared trunk and two heads.
//! Every hidden layer computes `sin(w * (W x + b))` where `w` is `omega0`
//! for the first layer of the network and `omega` for the rest; each head
//! ends in a plain linear layer producing one amplitude. With an empty head
//! stack the model degenerates to a single-path MLP whose output layer lives
//! in head 0, and both "heads" return the same signal.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoding::PeConfig;
use crate::error::{Error, Result};
use crate::Real;

/// Architecture hyperparameters.
///
/// `shared` and `siamese` list hidden-layer widths for the trunk and for
/// each head; either may be empty. `omega0` scales the first layer's
/// pre-activation, `omega` every later sine layer's.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub pe: PeConfig,
    pub shared: Vec<usize>,
    pub siamese: Vec<usize>,
    pub omega0: f32,
    pub omega: f32,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            pe: PeConfig::default(),
            shared: vec![256, 256],
            siamese: vec![128],
            omega0: 100.0,
            omega: 100.0,
        }
    }
}

/// Weight-matrix shapes `(out, in)` implied by a [`NetConfig`].
///
/// `head` describes one head stack including its final linear layer; with an
/// empty `siamese` list it applies to head 0 only.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerShapes {
    pub shared: Vec<(usize, usize)>,
    pub head: Vec<(usize, usize)>,
}

impl NetConfig {
    /// Width of the encoded input vector.
    pub fn input_dim(&self) -> usize {
        self.pe.dims()
    }

    /// True when the model has two independent heads.
    pub fn is_siamese(&self) -> bool {
        !self.siamese.is_empty()
    }

    /// Rejects configurations the container format or the math cannot
    /// represent: zero widths, out-of-range sizes, non-positive frequencies.
    pub fn validate(&self) -> Result<()> {
        let max = u16::MAX as usize;
        if self.pe.l > max {
            return Err(Error::InvalidArg(format!(
                "positional encoding order {} exceeds {max}",
                self.pe.l
            )));
        }
        if !(self.pe.sigma.is_finite() && self.pe.sigma > 0.0) {
            return Err(Error::InvalidArg(format!(
                "positional encoding base must be positive, got {}",
                self.pe.sigma
            )));
        }
        for (name, widths) in [("shared", &self.shared), ("siamese", &self.siamese)] {
            if widths.len() > max {
                return Err(Error::InvalidArg(format!("too many {name} layers")));
            }
            for &w in widths.iter() {
                if w == 0 || w > max {
                    return Err(Error::InvalidArg(format!(
                        "{name} layer width {w} out of range 1..={max}"
                    )));
                }
            }
        }
        for (name, v) in [("omega0", self.omega0), ("omega", self.omega)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArg(format!(
                    "{name} must be a positive finite number, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Weight shapes per segment. Empty in both segments means no network.
    pub fn layer_shapes(&self) -> LayerShapes {
        if self.shared.is_empty() && self.siamese.is_empty() {
            return LayerShapes {
                shared: Vec::new(),
                head: Vec::new(),
            };
        }
        let mut dim = self.input_dim();
        let mut shared = Vec::with_capacity(self.shared.len());
        for &w in &self.shared {
            shared.push((w, dim));
            dim = w;
        }
        let mut head = Vec::with_capacity(self.siamese.len() + 1);
        for &w in &self.siamese {
            head.push((w, dim));
            dim = w;
        }
        head.push((1, dim));
        LayerShapes { shared, head }
    }

    /// Total number of scalar parameters (weights plus biases).
    pub fn param_count(&self) -> usize {
        let shapes = self.layer_shapes();
        let per_layer = |&(o, i): &(usize, usize)| o * i + o;
        let shared: usize = shapes.shared.iter().map(per_layer).sum();
        let head: usize = shapes.head.iter().map(per_layer).sum();
        let head_count = if self.is_siamese() { 2 } else { 1 };
        shared + head_count * head
    }
}

/// Total number of scalar parameters implied by a configuration.
pub fn param_count(cfg: &NetConfig) -> usize {
    cfg.param_count()
}

/// One dense layer: `weight` is `(out, in)`, `bias` is `(out,)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> LayerParams<F> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LayerParams {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    /// Number of scalars in this layer.
    pub fn count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Full parameter set in canonical segment order: trunk, head 0, head 1.
///
/// Head 1 is empty for single-path models. The canonical tensor order used
/// by the quantizer and the container is: for each layer of each segment in
/// that order, the weight matrix (row-major) then the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseParams<F = f32> {
    pub shared: Vec<LayerParams<F>>,
    pub head0: Vec<LayerParams<F>>,
    pub head1: Vec<LayerParams<F>>,
}

/// Borrowed view of one canonical tensor (used by quantization and I/O).
#[derive(Debug)]
pub struct TensorView<'a, F> {
    pub label: String,
    pub shape: Vec<usize>,
    pub data: &'a [F],
}

impl<F: Real> SiameseParams<F> {
    /// Same shapes as `other`, all zeros (optimizer state, gradients).
    pub fn zeros_like(other: &Self) -> Self {
        let zero_seg = |seg: &Vec<LayerParams<F>>| {
            seg.iter()
                .map(|l| LayerParams::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect()
        };
        SiameseParams {
            shared: zero_seg(&other.shared),
            head0: zero_seg(&other.head0),
            head1: zero_seg(&other.head1),
        }
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.layers().map(|l| l.count()).sum()
    }

    /// Layers in canonical order.
    pub fn layers(&self) -> impl Iterator<Item = &LayerParams<F>> {
        self.shared
            .iter()
            .chain(self.head0.iter())
            .chain(self.head1.iter())
    }

    /// Mutable layers in canonical order.
    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams<F>> {
        self.shared
            .iter_mut()
            .chain(self.head0.iter_mut())
            .chain(self.head1.iter_mut())
    }

    /// Canonical tensor sequence: per layer, weight then bias.
    pub fn tensor_views(&self) -> Vec<TensorView<'_, F>> {
        let mut out = Vec::new();
        for (seg_name, seg) in [
            ("shared", &self.shared),
            ("head0", &self.head0),
            ("head1", &self.head1),
        ] {
            for (i, layer) in seg.iter().enumerate() {
                out.push(TensorView {
                    label: format!("{seg_name}.{i}.weight"),
                    shape: layer.weight.shape().to_vec(),
                    data: layer
                        .weight
                        .as_slice()
                        .expect("weights are stored row-major"),
                });
                out.push(TensorView {
                    label: format!("{seg_name}.{i}.bias"),
                    shape: vec![layer.bias.len()],
                    data: layer.bias.as_slice().expect("bias is contiguous"),
                });
            }
        }
        out
    }

    /// Converts precision (used by tests that train in `f64`).
    pub fn cast<G: Real>(&self) -> SiameseParams<G> {
        let cast_seg = |seg: &Vec<LayerParams<F>>| {
            seg.iter()
                .map(|l| LayerParams {
                    weight: l.weight.mapv(|v| G::from_f64(v.to_f64())),
                    bias: l.bias.mapv(|v| G::from_f64(v.to_f64())),
                })
                .collect()
        };
        SiameseParams {
            shared: cast_seg(&self.shared),
            head0: cast_seg(&self.head0),
            head1: cast_seg(&self.head1),
        }
    }
}

// RNG stream ids, one per independently initialized segment. Head streams
// are distinct so the two heads disagree from the first iteration, which is
// what makes their difference usable as a noise probe.
const STREAM_SHARED: u64 = 0;
const STREAM_HEAD0: u64 = 1;
const STREAM_HEAD1: u64 = 2;
/// Stream used by the trainer for batch shuffling.
pub(crate) const STREAM_BATCH: u64 = 3;

fn segment_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws one segment. `first_offset` marks which layer index (if any) is the
/// network's first layer; the final entry of a head segment is linear.
fn init_segment<F: Real>(
    shapes: &[(usize, usize)],
    is_head: bool,
    network_first: bool,
    cfg: &NetConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<LayerParams<F>> {
    let mut out = Vec::with_capacity(shapes.len());
    for (idx, &(o, i)) in shapes.iter().enumerate() {
        let first = network_first && idx == 0;
        // First layer: U(-1/fan_in, 1/fan_in). Every other layer, sine or
        // linear: U(+-sqrt(6/fan_in)/omega).
        let bound = if first {
            1.0 / i as f64
        } else {
            (6.0 / i as f64).sqrt() / cfg.omega as f64
        };
        let dist = Uniform::new_inclusive(-bound, bound).expect("bound is positive");
        let mut layer = LayerParams::<F>::zeros(o, i);
        for w in layer.weight.iter_mut() {
            *w = F::from_f64(dist.sample(rng));
        }
        // Biases start at zero.
        out.push(layer);
    }
    let _ = is_head;
    out
}

/// Initializes all parameters from `seed`.
///
/// The trunk and the two heads draw from separate, decorrelated streams of
/// the same seeded generator, so the heads start different from each other
/// but the whole net is reproducible from the single seed.
pub fn init<F: Real>(cfg: &NetConfig, seed: u64) -> Result<SiameseParams<F>> {
    cfg.validate()?;
    let shapes = cfg.layer_shapes();
    let trunk_first = !shapes.shared.is_empty();

    let shared = init_segment(
        &shapes.shared,
        false,
        trunk_first,
        cfg,
        &mut segment_rng(seed, STREAM_SHARED),
    );
    let head0 = init_segment(
        &shapes.head,
        true,
        !trunk_first,
        cfg,
        &mut segment_rng(seed, STREAM_HEAD0),
    );
    let head1 = if cfg.is_siamese() {
        init_segment(
            &shapes.head,
            true,
            !trunk_first,
            cfg,
            &mut segment_rng(seed, STREAM_HEAD1),
        )
    } else {
        Vec::new()
    };

    Ok(SiameseParams {
        shared,
        head0,
        head1,
    })
}

/// The labeled tensor sequence a configuration implies, in canonical order.
/// This is the schema that [`SiameseParams::tensor_views`] instances follow.
pub fn canonical_tensor_shapes(cfg: &NetConfig) -> Vec<(String, Vec<usize>)> {
    let shapes = cfg.layer_shapes();
    let mut out = Vec::new();
    let mut push_seg = |name: &str, seg: &[(usize, usize)]| {
        for (i, &(o, inp)) in seg.iter().enumerate() {
            out.push((format!("{name}.{i}.weight"), vec![o, inp]));
            out.push((format!("{name}.{i}.bias"), vec![o]));
        }
    };
    push_seg("shared", &shapes.shared);
    push_seg("head0", &shapes.head);
    if cfg.is_siamese() {
        push_seg("head1", &shapes.head);
    }
    out
}

/// Checks that `params` has exactly the shapes `cfg` implies.
pub fn params_match_config<F: Real>(params: &SiameseParams<F>, cfg: &NetConfig) -> Result<()> {
    let shapes = cfg.layer_shapes();
    let expected_head1: &[(usize, usize)] = if cfg.is_siamese() { &shapes.head } else { &[] };
    let segments = [
        (&params.shared, shapes.shared.as_slice()),
        (&params.head0, shapes.head.as_slice()),
        (&params.head1, expected_head1),
    ];
    let mut layer_idx = 0usize;
    for (seg, expected) in segments {
        if seg.len() != expected.len() {
            return Err(Error::ShapeMismatch {
                layer: layer_idx,
                expected: format!("{} layers in segment", expected.len()),
                got: format!("{} layers", seg.len()),
            });
        }
        for (l, &(o, i)) in seg.iter().zip(expected) {
            if l.weight.shape() != [o, i] || l.bias.len() != o {
                return Err(Error::ShapeMismatch {
                    layer: layer_idx,
                    expected: format!("weight ({o}, {i}), bias ({o},)"),
                    got: format!(
                        "weight {:?}, bias ({},)",
                        l.weight.shape(),
                        l.bias.len()
                    ),
                });
            }
            layer_idx += 1;
        }
    }
    Ok(())
}

/// Applies one dense layer; `sine_scale` wraps the output in `sin(scale * u)`.
pub(crate) fn apply_layer<F: Real>(
    x: &Array2<F>,
    layer: &LayerParams<F>,
    sine_scale: Option<F>,
) -> Array2<F> {
    let mut u = x.dot(&layer.weight.t());
    u += &layer.bias;
    match sine_scale {
        Some(w) => u.mapv_into(|v| (w * v).sin()),
        None => u,
    }
}

/// Per-layer sine multipliers for one head stack (None = linear output).
pub(crate) fn head_scales<F: Real>(cfg: &NetConfig, trunk_present: bool) -> Vec<Option<F>> {
    let omega0 = F::from_f64(cfg.omega0 as f64);
    let omega = F::from_f64(cfg.omega as f64);
    let mut scales = Vec::with_capacity(cfg.siamese.len() + 1);
    for i in 0..cfg.siamese.len() {
        scales.push(Some(if !trunk_present && i == 0 { omega0 } else { omega }));
    }
    scales.push(None);
    scales
}

/// Per-layer sine multipliers for the trunk.
pub(crate) fn trunk_scales<F: Real>(cfg: &NetConfig) -> Vec<Option<F>> {
    let omega0 = F::from_f64(cfg.omega0 as f64);
    let omega = F::from_f64(cfg.omega as f64);
    (0..cfg.shared.len())
        .map(|i| Some(if i == 0 { omega0 } else { omega }))
        .collect()
}

/// Runs the network on a batch of encoded coordinates (rows), returning the
/// two head outputs. Single-path models return the same signal twice.
pub fn forward<F: Real>(
    params: &SiameseParams<F>,
    cfg: &NetConfig,
    coords: ArrayView2<F>,
) -> Result<(Array1<F>, Array1<F>)> {
    cfg.validate()?;
    params_match_config(params, cfg)?;
    if cfg.shared.is_empty() && cfg.siamese.is_empty() {
        return Err(Error::InvalidArg(
            "network has no layers; nothing to evaluate".into(),
        ));
    }
    if coords.ncols() != cfg.input_dim() {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: format!("input dim {}", cfg.input_dim()),
            got: format!("input dim {}", coords.ncols()),
        });
    }

    let trunk_present = !cfg.shared.is_empty();
    let mut z = coords.to_owned();
    for (layer, scale) in params.shared.iter().zip(trunk_scales::<F>(cfg)) {
        z = apply_layer(&z, layer, scale);
    }

    let run_head = |head: &[LayerParams<F>]| -> Array1<F> {
        let mut h = z.clone();
        for (layer, scale) in head.iter().zip(head_scales::<F>(cfg, trunk_present)) {
            h = apply_layer(&h, layer, scale);
        }
        h.index_axis(Axis(1), 0).to_owned()
    };

    let y0 = run_head(&params.head0);
    let y1 = if cfg.is_siamese() {
        run_head(&params.head1)
    } else {
        y0.clone()
    };
    Ok((y0, y1))
}
