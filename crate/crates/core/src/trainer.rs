//! Loss, analytic gradients, and the Adam training loop.
//!
//! Training overfits the network to one clip: inputs are the encoded time
//! grid, targets the samples. The loss is the mean of the two heads' MSEs,
//! so each head is pulled toward the signal independently while sharing the
//! trunk. Gradients are computed by hand-rolled reverse-mode
//! differentiation through the sine layers; tests check them against
//! finite differences of an independent scalar-loop implementation.

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Dimension, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio_io::AudioClip;
use crate::encoding::{encode_batch, time_grid};
use crate::error::{Error, Result};
use crate::model::{
    self, head_scales, trunk_scales, LayerParams, NetConfig, SiameseParams,
};
use crate::Real;

/// Batch selection strategy. `Full` uses every sample each iteration;
/// `Size(n)` draws shuffled mini-batches of `n` without replacement,
/// reshuffling each epoch (the final batch of an epoch may be short).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batch {
    Full,
    Size(usize),
}

/// Optimizer hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: Batch,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2500,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch: Batch::Full,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArg(format!(
                    "{name} must be finite and non-negative, got {v}"
                )))
            }
        };
        finite_nonneg("learning rate", self.learning_rate)?;
        finite_nonneg("weight decay", self.weight_decay)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b.is_finite() && (0.0..1.0).contains(&b)) {
                return Err(Error::InvalidArg(format!(
                    "{name} must be in [0, 1), got {b}"
                )));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::InvalidArg(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.batch == Batch::Size(0) {
            return Err(Error::InvalidArg("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// What a training run produced, besides the weights.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Pre-step loss at every iteration (on that iteration's batch).
    pub losses: Vec<f64>,
    /// Wall-clock training time.
    pub duration: Duration,
    /// Final full-signal MSE of head 0 and head 1.
    pub final_mse: [f64; 2],
}

fn check_batch<F: Real>(coords: &ArrayView2<F>, targets: &ArrayView1<F>) -> Result<()> {
    if coords.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if coords.nrows() != targets.len() {
        return Err(Error::LengthMismatch {
            left: coords.nrows(),
            right: targets.len(),
        });
    }
    Ok(())
}

fn mse_f64<F: Real>(pred: &Array1<F>, targets: &ArrayView1<F>) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(targets.iter())
        .map(|(&p, &t)| {
            let e = p.to_f64() - t.to_f64();
            e * e
        })
        .sum::<f64>()
        / n
}

/// Training loss: the mean of the two heads' MSEs against the targets,
/// accumulated in double precision.
pub fn loss<F: Real>(
    params: &SiameseParams<F>,
    cfg: &NetConfig,
    coords: ArrayView2<F>,
    targets: ArrayView1<F>,
) -> Result<f64> {
    check_batch(&coords, &targets)?;
    let (y0, y1) = model::forward(params, cfg, coords)?;
    Ok(0.5 * (mse_f64(&y0, &targets) + mse_f64(&y1, &targets)))
}

/// One chain's forward pass with everything backprop needs retained.
struct ChainCache<F> {
    /// `inputs[i]` is what layer `i` consumed; `inputs[0]` is the chain input.
    inputs: Vec<Array2<F>>,
    /// `cos(w * u)` per sine layer (`None` for linear layers).
    coses: Vec<Option<Array2<F>>>,
    output: Array2<F>,
}

fn forward_cached<F: Real>(
    layers: &[LayerParams<F>],
    scales: &[Option<F>],
    input: Array2<F>,
) -> ChainCache<F> {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut coses = Vec::with_capacity(layers.len());
    let mut x = input;
    for (layer, scale) in layers.iter().zip(scales) {
        let mut u = x.dot(&layer.weight.t());
        u += &layer.bias;
        inputs.push(x);
        match scale {
            Some(w) => {
                let w = *w;
                let mut cos = Array2::zeros(u.raw_dim());
                Zip::from(&mut u).and(&mut cos).for_each(|u, c| {
                    let (s, cv) = (w * *u).sin_cos();
                    *u = s;
                    *c = cv;
                });
                coses.push(Some(cos));
                x = u;
            }
            None => {
                coses.push(None);
                x = u;
            }
        }
    }
    ChainCache {
        inputs,
        coses,
        output: x,
    }
}

/// Reverse pass through one chain. Returns per-layer gradients and the
/// gradient with respect to the chain input.
fn backward_chain<F: Real>(
    layers: &[LayerParams<F>],
    scales: &[Option<F>],
    cache: &ChainCache<F>,
    mut d_out: Array2<F>,
) -> (Vec<LayerParams<F>>, Array2<F>) {
    let mut grads: Vec<LayerParams<F>> = Vec::with_capacity(layers.len());
    for i in (0..layers.len()).rev() {
        // d_out is dL/dz for layer i's output z. Undo the sine first:
        // z = sin(w u) => dL/du = dL/dz * w cos(w u).
        if let (Some(w), Some(cos)) = (scales[i], cache.coses[i].as_ref()) {
            Zip::from(&mut d_out).and(cos).for_each(|d, &c| *d *= w * c);
        }
        let x = &cache.inputs[i];
        // `dot` may hand back a column-major result depending on operand
        // shapes; normalize so gradient tensors expose contiguous rows like
        // every other parameter-shaped tensor.
        let mut d_w = d_out.t().dot(x);
        if !d_w.is_standard_layout() {
            d_w = Array2::from_shape_vec(d_w.raw_dim(), d_w.iter().copied().collect())
                .expect("same shape, freshly collected");
        }
        let d_b = d_out.sum_axis(Axis(0));
        d_out = d_out.dot(&layers[i].weight);
        grads.push(LayerParams {
            weight: d_w,
            bias: d_b,
        });
    }
    grads.reverse();
    (grads, d_out)
}

/// Loss and its gradient with respect to every parameter, from one fused
/// forward/backward pass.
pub fn loss_and_grad<F: Real>(
    params: &SiameseParams<F>,
    cfg: &NetConfig,
    coords: ArrayView2<F>,
    targets: ArrayView1<F>,
) -> Result<(f64, SiameseParams<F>)> {
    check_batch(&coords, &targets)?;
    cfg.validate()?;
    model::params_match_config(params, cfg)?;
    if cfg.shared.is_empty() && cfg.siamese.is_empty() {
        return Err(Error::InvalidArg(
            "network has no layers; nothing to train".into(),
        ));
    }

    let n = coords.nrows();
    let trunk_present = !cfg.shared.is_empty();
    let t_scales = trunk_scales::<F>(cfg);
    let h_scales = head_scales::<F>(cfg, trunk_present);

    let trunk = forward_cached(&params.shared, &t_scales, coords.to_owned());
    let c0 = forward_cached(&params.head0, &h_scales, trunk.output.clone());
    let c1 = if cfg.is_siamese() {
        Some(forward_cached(&params.head1, &h_scales, trunk.output.clone()))
    } else {
        None
    };

    let y0 = c0.output.index_axis(Axis(1), 0);
    let y1 = c1
        .as_ref()
        .map(|c| c.output.index_axis(Axis(1), 0))
        .unwrap_or(y0);

    // Loss (f64) and per-head residuals dL/dy = (y - t) / n.
    let inv_n = F::from_f64(1.0 / n as f64);
    let mut loss0 = 0.0f64;
    let mut loss1 = 0.0f64;
    let mut r0 = Array2::<F>::zeros((n, 1));
    let mut r1 = Array2::<F>::zeros((n, 1));
    for i in 0..n {
        let t = targets[i];
        let e0 = y0[i] - t;
        let e1 = y1[i] - t;
        loss0 += e0.to_f64() * e0.to_f64();
        loss1 += e1.to_f64() * e1.to_f64();
        r0[(i, 0)] = e0 * inv_n;
        r1[(i, 0)] = e1 * inv_n;
    }
    let loss = 0.5 * (loss0 + loss1) / n as f64;

    let (grads, d_trunk) = match &c1 {
        Some(c1) => {
            let (g0, d0) = backward_chain(&params.head0, &h_scales, &c0, r0);
            let (g1, d1) = backward_chain(&params.head1, &h_scales, c1, r1);
            ((g0, g1), d0 + d1)
        }
        None => {
            // Single path: both loss terms flow through head 0.
            let (g0, d0) = backward_chain(&params.head0, &h_scales, &c0, r0 + r1);
            ((g0, Vec::new()), d0)
        }
    };
    let (g_shared, _) = backward_chain(&params.shared, &t_scales, &trunk, d_trunk);

    Ok((
        loss,
        SiameseParams {
            shared: g_shared,
            head0: grads.0,
            head1: grads.1,
        },
    ))
}

/// Gradient of [`loss`] with respect to every parameter.
pub fn grad<F: Real>(
    params: &SiameseParams<F>,
    cfg: &NetConfig,
    coords: ArrayView2<F>,
    targets: ArrayView1<F>,
) -> Result<SiameseParams<F>> {
    loss_and_grad(params, cfg, coords, targets).map(|(_, g)| g)
}

/// Adam moment estimates.
struct AdamState<F> {
    m: SiameseParams<F>,
    v: SiameseParams<F>,
    t: i32,
}

/// Per-step Adam coefficients, precomputed once per iteration.
struct AdamCoeffs<F> {
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    bc1: F,
    bc2: F,
}

impl<F: Real> AdamState<F> {
    fn new(like: &SiameseParams<F>) -> Self {
        AdamState {
            m: SiameseParams::zeros_like(like),
            v: SiameseParams::zeros_like(like),
            t: 0,
        }
    }

    fn update_tensor<D: Dimension>(
        p: &mut ndarray::Array<F, D>,
        g: &ndarray::Array<F, D>,
        m: &mut ndarray::Array<F, D>,
        v: &mut ndarray::Array<F, D>,
        k: &AdamCoeffs<F>,
    ) {
        let one = F::one();
        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = k.beta1 * *m + (one - k.beta1) * g;
            *v = k.beta2 * *v + (one - k.beta2) * g * g;
            let m_hat = *m / k.bc1;
            let v_hat = *v / k.bc2;
            *p -= k.lr * m_hat / (v_hat.sqrt() + k.eps);
        });
    }

    fn step(&mut self, params: &mut SiameseParams<F>, grads: &SiameseParams<F>, cfg: &TrainConfig) {
        self.t += 1;
        let k = AdamCoeffs {
            lr: F::from_f64(cfg.learning_rate),
            beta1: F::from_f64(cfg.beta1),
            beta2: F::from_f64(cfg.beta2),
            eps: F::from_f64(cfg.eps),
            bc1: F::from_f64(1.0 - cfg.beta1.powi(self.t)),
            bc2: F::from_f64(1.0 - cfg.beta2.powi(self.t)),
        };
        for (((p, g), m), v) in params
            .layers_mut()
            .zip(grads.layers())
            .zip(self.m.layers_mut())
            .zip(self.v.layers_mut())
        {
            Self::update_tensor(&mut p.weight, &g.weight, &mut m.weight, &mut v.weight, &k);
            Self::update_tensor(&mut p.bias, &g.bias, &mut m.bias, &mut v.bias, &k);
        }
    }
}

/// Decoupled weight decay: `p -= lr * wd * p`, applied before the Adam step
/// so the decay is not filtered through the moment estimates.
fn apply_weight_decay<F: Real>(params: &mut SiameseParams<F>, lr: f64, wd: f64) {
    let decay = lr * wd;
    if decay == 0.0 {
        return; // avoid touching params (and -0.0 bit patterns) in the no-op case
    }
    let d = F::from_f64(decay);
    for l in params.layers_mut() {
        l.weight.mapv_inplace(|x| x - d * x);
        l.bias.mapv_inplace(|x| x - d * x);
    }
}

/// Epoch-shuffled mini-batch index stream.
struct BatchPlan {
    order: Vec<usize>,
    pos: usize,
    size: usize,
    rng: ChaCha8Rng,
}

impl BatchPlan {
    fn new(n: usize, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(model::STREAM_BATCH);
        let mut plan = BatchPlan {
            order: (0..n).collect(),
            pos: 0,
            size,
            rng,
        };
        plan.order.shuffle(&mut plan.rng);
        plan
    }

    fn next(&mut self) -> &[usize] {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.size).min(self.order.len());
        let batch = &self.order[self.pos..end];
        self.pos = end;
        batch
    }
}

/// Overfits a fresh network to `clip`. See [`train_with_progress`].
pub fn train<F: Real>(
    clip: &AudioClip,
    net_cfg: &NetConfig,
    train_cfg: &TrainConfig,
) -> Result<(SiameseParams<F>, TrainReport)> {
    train_with_progress(clip, net_cfg, train_cfg, |_, _| {})
}

/// Overfits a fresh network to `clip`, invoking `progress(iteration, loss)`
/// once per iteration with the pre-step loss.
///
/// Aborts with [`Error::NonFiniteLoss`] the first time the loss leaves the
/// finite range, leaving no partially poisoned result.
pub fn train_with_progress<F: Real>(
    clip: &AudioClip,
    net_cfg: &NetConfig,
    train_cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(SiameseParams<F>, TrainReport)> {
    train_cfg.validate()?;
    net_cfg.validate()?;
    if clip.samples.is_empty() {
        return Err(Error::EmptyBatch);
    }

    let started = Instant::now();
    let n = clip.samples.len();
    let times: Vec<F> = time_grid(n);
    let coords = encode_batch(&times, &net_cfg.pe);
    let targets = Array1::from_iter(clip.samples.iter().map(|&s| F::from_f64(s as f64)));

    let mut params = model::init::<F>(net_cfg, train_cfg.seed)?;
    let mut adam = AdamState::new(&params);
    let mut plan = match train_cfg.batch {
        Batch::Full => None,
        Batch::Size(b) => Some(BatchPlan::new(n, b.min(n), train_cfg.seed)),
    };

    let mut losses = Vec::with_capacity(train_cfg.iterations);
    for iter in 0..train_cfg.iterations {
        let (loss, grads) = match &mut plan {
            None => loss_and_grad(&params, net_cfg, coords.view(), targets.view())?,
            Some(plan) => {
                let idx = plan.next();
                let bc = coords.select(Axis(0), idx);
                let bt = targets.select(Axis(0), idx);
                loss_and_grad(&params, net_cfg, bc.view(), bt.view())?
            }
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter });
        }
        losses.push(loss);
        progress(iter, loss);

        apply_weight_decay(&mut params, train_cfg.learning_rate, train_cfg.weight_decay);
        adam.step(&mut params, &grads, train_cfg);
    }

    let (y0, y1) = model::forward(&params, net_cfg, coords.view())?;
    let final_mse = [
        mse_f64(&y0, &targets.view()),
        mse_f64(&y1, &targets.view()),
    ];

    Ok((
        params,
        TrainReport {
            losses,
            duration: started.elapsed(),
            final_mse,
        },
    ))
}
