//! Brute-force reference implementations used to cross-check the main crate.
//!
//! Everything here is written for obviousness, not speed: scalar loops over
//! `Vec<Vec<f64>>`, no linear-algebra or FFT libraries, no code shared with
//! the production crate. Sizes are deliberately capped so accidental use on
//! real workloads fails loudly instead of hanging.
//!
//! Provided oracles:
//!
//! * [`oracle_forward`] / [`oracle_loss`] — scalar-loop network evaluation.
//! * [`oracle_fd_grad`] — central finite-difference gradients.
//! * [`oracle_dft`] — the O(n^2) discrete Fourier transform by definition.

use num_complex::Complex;
use thiserror::Error;

/// Largest parameter count the network oracles accept.
pub const MAX_PARAMS: usize = 512;
/// Largest batch the network oracles accept.
pub const MAX_SAMPLES: usize = 256;
/// Largest input length the DFT oracle accepts.
pub const MAX_DFT: usize = 4096;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle size cap exceeded: {0}")]
    CapExceeded(String),
    #[error("bad oracle input: {0}")]
    BadInput(String),
}

/// One dense layer. `scale = Some(w)` means the layer outputs `sin(w * u)`;
/// `None` means it is linear.
#[derive(Debug, Clone)]
pub struct OracleLayer {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub scale: Option<f64>,
}

impl OracleLayer {
    fn out_dim(&self) -> usize {
        self.weight.len()
    }

    fn in_dim(&self) -> usize {
        self.weight.first().map_or(0, |r| r.len())
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.out_dim());
        for (row, b) in self.weight.iter().zip(&self.bias) {
            let mut u = *b;
            for (w, v) in row.iter().zip(x) {
                u += w * v;
            }
            out.push(match self.scale {
                Some(s) => (s * u).sin(),
                None => u,
            });
        }
        out
    }
}

/// A twin-head network in oracle form. `head1` may be empty, in which case
/// both outputs come from `head0`.
#[derive(Debug, Clone)]
pub struct OracleNet {
    /// Number of sin/cos pairs in the positional encoding.
    pub pe_l: usize,
    /// Geometric frequency base of the encoding.
    pub pe_sigma: f64,
    pub shared: Vec<OracleLayer>,
    pub head0: Vec<OracleLayer>,
    pub head1: Vec<OracleLayer>,
}

impl OracleNet {
    pub fn param_count(&self) -> usize {
        self.layers()
            .map(|l| l.out_dim() * l.in_dim() + l.bias.len())
            .sum()
    }

    fn layers(&self) -> impl Iterator<Item = &OracleLayer> {
        self.shared
            .iter()
            .chain(self.head0.iter())
            .chain(self.head1.iter())
    }

    fn check(&self, n_samples: usize) -> Result<(), OracleError> {
        if self.param_count() > MAX_PARAMS {
            return Err(OracleError::CapExceeded(format!(
                "{} params > {MAX_PARAMS}",
                self.param_count()
            )));
        }
        if n_samples > MAX_SAMPLES {
            return Err(OracleError::CapExceeded(format!(
                "{n_samples} samples > {MAX_SAMPLES}"
            )));
        }
        if self.head0.is_empty() {
            return Err(OracleError::BadInput("head0 must not be empty".into()));
        }
        for l in self.layers() {
            if l.weight.len() != l.bias.len() {
                return Err(OracleError::BadInput(
                    "weight rows and bias length differ".into(),
                ));
            }
        }
        Ok(())
    }

    /// Positional encoding by definition:
    /// `[t, sin(pi t), cos(pi t), sin(sigma pi t), cos(sigma pi t), ...]`.
    pub fn embed(&self, t: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.pe_l + 1);
        v.push(t);
        for k in 0..self.pe_l {
            let freq = std::f64::consts::PI * self.pe_sigma.powi(k as i32);
            v.push((freq * t).sin());
            v.push((freq * t).cos());
        }
        v
    }

    /// Visits every parameter in canonical order: for each segment (shared,
    /// head0, head1), for each layer, weight entries row-major then biases.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for seg in [&mut self.shared, &mut self.head0, &mut self.head1] {
            for layer in seg.iter_mut() {
                for row in layer.weight.iter_mut() {
                    for w in row.iter_mut() {
                        f(w);
                    }
                }
                for b in layer.bias.iter_mut() {
                    f(b);
                }
            }
        }
    }

    /// Adds `delta` to the parameter at `index` in canonical order.
    pub fn nudge(&mut self, index: usize, delta: f64) {
        let mut i = 0usize;
        self.for_each_param_mut(|p| {
            if i == index {
                *p += delta;
            }
            i += 1;
        });
    }
}

fn run_chain(layers: &[OracleLayer], mut x: Vec<f64>) -> Vec<f64> {
    for l in layers {
        x = l.apply(&x);
    }
    x
}

/// Evaluates both heads at one time coordinate.
pub fn oracle_forward(net: &OracleNet, t: f64) -> Result<(f64, f64), OracleError> {
    net.check(1)?;
    let trunk = run_chain(&net.shared, net.embed(t));
    let y0 = run_chain(&net.head0, trunk.clone());
    if y0.len() != 1 {
        return Err(OracleError::BadInput("head0 must end 1-wide".into()));
    }
    let f0 = y0[0];
    let f1 = if net.head1.is_empty() {
        f0
    } else {
        let y1 = run_chain(&net.head1, trunk);
        if y1.len() != 1 {
            return Err(OracleError::BadInput("head1 must end 1-wide".into()));
        }
        y1[0]
    };
    Ok((f0, f1))
}

/// Training loss by definition: the mean of the two heads' MSEs.
pub fn oracle_loss(net: &OracleNet, times: &[f64], targets: &[f64]) -> Result<f64, OracleError> {
    net.check(times.len())?;
    if times.is_empty() {
        return Err(OracleError::BadInput("empty batch".into()));
    }
    if times.len() != targets.len() {
        return Err(OracleError::BadInput("times/targets length differ".into()));
    }
    let n = times.len() as f64;
    let mut sse0 = 0.0;
    let mut sse1 = 0.0;
    for (&t, &y) in times.iter().zip(targets) {
        let (f0, f1) = oracle_forward(net, t)?;
        sse0 += (f0 - y) * (f0 - y);
        sse1 += (f1 - y) * (f1 - y);
    }
    Ok(0.5 * (sse0 / n + sse1 / n))
}

/// Central finite-difference gradient of [`oracle_loss`] with step `h`,
/// flattened in the same canonical order as [`OracleNet::nudge`].
pub fn oracle_fd_grad(
    net: &OracleNet,
    times: &[f64],
    targets: &[f64],
    h: f64,
) -> Result<Vec<f64>, OracleError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(OracleError::BadInput(format!("step must be positive, got {h}")));
    }
    // Validate once up front (also enforces the caps).
    oracle_loss(net, times, targets)?;
    let p = net.param_count();
    let mut grad = Vec::with_capacity(p);
    let mut work = net.clone();
    for k in 0..p {
        work.nudge(k, h);
        let plus = oracle_loss(&work, times, targets)?;
        work.nudge(k, -2.0 * h);
        let minus = oracle_loss(&work, times, targets)?;
        work.nudge(k, h); // restore
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// The discrete Fourier transform straight from its definition:
/// `X[k] = sum_n x[n] * exp(-2 pi i k n / N)`.
pub fn oracle_dft(x: &[f64]) -> Result<Vec<Complex<f64>>, OracleError> {
    let n = x.len();
    if n > MAX_DFT {
        return Err(OracleError::CapExceeded(format!("{n} samples > {MAX_DFT}")));
    }
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = Complex::new(0.0, 0.0);
        for (j, &v) in x.iter().enumerate() {
            let angle = -2.0 * std::f64::consts::PI * (k as f64) * (j as f64) / (n as f64);
            acc += Complex::new(angle.cos(), angle.sin()) * v;
        }
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_layer(w: f64, b: f64, scale: Option<f64>) -> OracleLayer {
        OracleLayer {
            weight: vec![vec![w]],
            bias: vec![b],
            scale,
        }
    }

    fn tiny_net() -> OracleNet {
        OracleNet {
            pe_l: 0,
            pe_sigma: 2.0,
            shared: vec![unit_layer(2.0, 0.5, Some(1.0))],
            head0: vec![unit_layer(3.0, -1.0, None)],
            head1: vec![],
        }
    }

    #[test]
    fn forward_matches_hand_computation() {
        let (f0, f1) = oracle_forward(&tiny_net(), 0.25).unwrap();
        let expected = 3.0 * (2.0f64 * 0.25 + 0.5).sin() - 1.0;
        assert!((f0 - expected).abs() < 1e-15);
        assert_eq!(f0, f1, "empty head1 mirrors head0");
    }

    #[test]
    fn loss_is_mean_of_head_mses() {
        let mut net = tiny_net();
        net.head1 = vec![unit_layer(1.0, 0.0, None)];
        let times = [0.0, 0.5];
        let targets = [0.1, -0.2];
        let mut sse0 = 0.0;
        let mut sse1 = 0.0;
        for (&t, &y) in times.iter().zip(&targets) {
            let (f0, f1) = oracle_forward(&net, t).unwrap();
            sse0 += (f0 - y) * (f0 - y);
            sse1 += (f1 - y) * (f1 - y);
        }
        let want = 0.5 * (sse0 / 2.0 + sse1 / 2.0);
        let got = oracle_loss(&net, &times, &targets).unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn fd_grad_is_zero_for_parameters_that_cannot_matter() {
        // With t = 0 and no positional encoding the input vector is all
        // zeros, so first-layer weights never influence the loss and their
        // finite-difference gradient must vanish identically.
        let net = tiny_net();
        let grad = oracle_fd_grad(&net, &[0.0], &[0.3], 1e-4).unwrap();
        assert_eq!(net.param_count(), 4);
        assert_eq!(grad[0], 0.0, "dead first-layer weight");
        assert!(grad[1].abs() > 0.0, "bias still matters");
    }

    #[test]
    fn fd_grad_matches_closed_form_on_a_linear_model() {
        // Loss = (w*t + b - y)^2 averaged over one sample; gradients are
        // 2e*t and 2e with e = w*t + b - y.
        let net = OracleNet {
            pe_l: 0,
            pe_sigma: 2.0,
            shared: vec![],
            head0: vec![unit_layer(0.7, 0.2, None)],
            head1: vec![],
        };
        let (t, y) = (0.4, -0.3);
        let e = 0.7 * t + 0.2 - y;
        let grad = oracle_fd_grad(&net, &[t], &[y], 1e-5).unwrap();
        assert!((grad[0] - 2.0 * e * t).abs() < 1e-8);
        assert!((grad[1] - 2.0 * e).abs() < 1e-8);
    }

    #[test]
    fn caps_are_enforced() {
        let mut net = tiny_net();
        net.shared = vec![OracleLayer {
            weight: vec![vec![0.0; 40]; 40],
            bias: vec![0.0; 40],
            scale: Some(1.0),
        }];
        assert!(matches!(
            oracle_forward(&net, 0.0),
            Err(OracleError::CapExceeded(_))
        ));

        let net = tiny_net();
        let times = vec![0.0; MAX_SAMPLES + 1];
        let targets = vec![0.0; MAX_SAMPLES + 1];
        assert!(matches!(
            oracle_loss(&net, &times, &targets),
            Err(OracleError::CapExceeded(_))
        ));

        assert!(oracle_dft(&vec![0.0; MAX_DFT + 1]).is_err());
    }

    #[test]
    fn dft_of_impulse_is_flat() {
        let mut x = vec![0.0; 16];
        x[0] = 1.0;
        let spec = oracle_dft(&x).unwrap();
        for c in spec {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dft_of_constant_concentrates_at_dc() {
        let x = vec![1.0; 32];
        let spec = oracle_dft(&x).unwrap();
        assert!((spec[0].re - 32.0).abs() < 1e-9);
        for c in &spec[1..] {
            assert!(c.norm() < 1e-9);
        }
    }

    #[test]
    fn dft_of_integer_sine_hits_its_bin() {
        let n = 64;
        let k0 = 5;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * k0 as f64 * i as f64 / n as f64).sin())
            .collect();
        let spec = oracle_dft(&x).unwrap();
        assert!((spec[k0].norm() - n as f64 / 2.0).abs() < 1e-9);
        assert!((spec[n - k0].norm() - n as f64 / 2.0).abs() < 1e-9);
        for (k, c) in spec.iter().enumerate() {
            if k != k0 && k != n - k0 {
                assert!(c.norm() < 1e-9, "leakage at bin {k}");
            }
        }
    }

    #[test]
    fn dft_preserves_energy() {
        // Parseval: sum |x|^2 = (1/N) sum |X|^2.
        let x: Vec<f64> = (0..50).map(|i| ((i * i) as f64).sin()).collect();
        let spec = oracle_dft(&x).unwrap();
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = spec.iter().map(|c| c.norm_sqr()).sum::<f64>() / 50.0;
        assert!((time - freq).abs() < 1e-9);
    }

    #[test]
    fn nudge_walks_canonical_order() {
        let mut net = tiny_net();
        // Params: shared w, shared b, head w, head b.
        net.nudge(0, 10.0);
        net.nudge(3, 100.0);
        assert_eq!(net.shared[0].weight[0][0], 12.0);
        assert_eq!(net.head0[0].bias[0], 99.0);
    }
}
