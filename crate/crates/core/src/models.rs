//! Per-sample losses and exact analytic gradients for the architectures
//! under study. Gradients are closed-form per architecture; the shapes are
//! small enough that a general autodiff engine would only add noise sources.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A scalar training pair.
pub type ScalarSample = (f64, f64);

/// Common interface for models trained on scalar `(x, y)` pairs.
///
/// Parameters are exposed as a flat slice so the steppers in
/// [`crate::dynamics`] can stay model-agnostic. `output` is the scalar model
/// prediction coefficient `v`; `charges` are the conserved-under-gradient-flow
/// quantities recorded along trajectories.
pub trait ScalarModel {
    fn dim(&self) -> usize;
    fn loss(&self, params: &[f64], sample: ScalarSample, gamma: f64) -> f64;
    fn grad(&self, params: &[f64], sample: ScalarSample, gamma: f64, out: &mut [f64]);
    fn output(&self, params: &[f64]) -> f64;
    fn charges(&self, params: &[f64]) -> Vec<f64>;
}

/// Diagonal linear network: `d0` subnetworks of `D+1` factors each.
///
/// The weight array is row-major `d0 x (D+1)`; subnetwork `i` contributes
/// `v_i = prod_k u_i^(k)` and the model output is `v = sum_i v_i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagonalNetwork {
    width: usize,
    depth: usize,
}

impl DiagonalNetwork {
    /// `depth` is `D >= 0`; each subnetwork has `D + 1` factors.
    pub fn new(width: usize, depth: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::DimensionMismatch("width must be >= 1".into()));
        }
        Ok(Self { width, depth })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn factors(&self) -> usize {
        self.depth + 1
    }

    fn check(&self, params: &[f64]) {
        debug_assert_eq!(params.len(), self.width * self.factors());
    }

    pub fn subnet_products(&self, params: &[f64]) -> Vec<f64> {
        self.check(params);
        let f = self.factors();
        (0..self.width)
            .map(|i| params[i * f..(i + 1) * f].iter().product())
            .collect()
    }
}

impl ScalarModel for DiagonalNetwork {
    fn dim(&self) -> usize {
        self.width * self.factors()
    }

    fn loss(&self, params: &[f64], (x, y): ScalarSample, gamma: f64) -> f64 {
        let v: f64 = self.subnet_products(params).iter().sum();
        let r = v * x - y;
        r * r + gamma * params.iter().map(|w| w * w).sum::<f64>()
    }

    fn grad(&self, params: &[f64], (x, y): ScalarSample, gamma: f64, out: &mut [f64]) {
        self.check(params);
        debug_assert_eq!(out.len(), params.len());
        let f = self.factors();
        let products = self.subnet_products(params);
        let v: f64 = products.iter().sum();
        let r2x = 2.0 * (v * x - y) * x;
        for i in 0..self.width {
            let row = &params[i * f..(i + 1) * f];
            for k in 0..f {
                // Product of the other factors, computed without division so
                // zero weights stay exact.
                let rest: f64 = row
                    .iter()
                    .enumerate()
                    .filter(|&(l, _)| l != k)
                    .map(|(_, w)| w)
                    .product();
                out[i * f + k] = r2x * rest + 2.0 * gamma * row[k];
            }
        }
    }

    fn output(&self, params: &[f64]) -> f64 {
        self.subnet_products(params).iter().sum()
    }

    /// For each subnetwork, the pairwise layer charges
    /// `(u_i^(k))^2 - (u_i^(k+1))^2` for consecutive factor pairs
    /// (a spanning set of the per-subnetwork conservation laws).
    fn charges(&self, params: &[f64]) -> Vec<f64> {
        self.check(params);
        let f = self.factors();
        let mut out = Vec::new();
        for i in 0..self.width {
            let row = &params[i * f..(i + 1) * f];
            for k in 0..f.saturating_sub(1) {
                out.push(row[k] * row[k] - row[k + 1] * row[k + 1]);
            }
        }
        out
    }
}

pub fn diag_loss(net: &DiagonalNetwork, params: &[f64], sample: ScalarSample, gamma: f64) -> f64 {
    net.loss(params, sample, gamma)
}

pub fn diag_grad(
    net: &DiagonalNetwork,
    params: &[f64],
    sample: ScalarSample,
    gamma: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; net.dim()];
    net.grad(params, sample, gamma, &mut out);
    out
}

/// Two-layer ReLU network `f(x) = sum_i u_i ReLU(w_i^T x + b_i)` with
/// `d` hidden neurons, inputs in `R^{d_in}` and outputs in `R^{d_out}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoLayerRelu {
    /// Output weights, `d` rows of length `d_out` (`u_i`).
    pub u: Vec<Vec<f64>>,
    /// Input weights, `d` rows of length `d_in` (`w_i`).
    pub w: Vec<Vec<f64>>,
    /// Biases, one per neuron.
    pub b: Vec<f64>,
}

/// Gradient of the ReLU loss with the same layout as [`TwoLayerRelu`].
#[derive(Debug, Clone)]
pub struct ReluGrad {
    pub du: Vec<Vec<f64>>,
    pub dw: Vec<Vec<f64>>,
    pub db: Vec<f64>,
}

impl TwoLayerRelu {
    pub fn neurons(&self) -> usize {
        self.u.len()
    }

    pub fn d_out(&self) -> usize {
        self.u.first().map_or(0, Vec::len)
    }

    pub fn d_in(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    fn validate(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if self.u.len() != self.w.len() || self.u.len() != self.b.len() {
            return Err(Error::DimensionMismatch(format!(
                "u/w/b rows disagree: {} / {} / {}",
                self.u.len(),
                self.w.len(),
                self.b.len()
            )));
        }
        if x.len() != self.d_in() || y.len() != self.d_out() {
            return Err(Error::DimensionMismatch(format!(
                "sample dims (x {}, y {}) vs net (in {}, out {})",
                x.len(),
                y.len(),
                self.d_in(),
                self.d_out()
            )));
        }
        Ok(())
    }

    /// Pre-activation `w_i^T x + b_i`; the neuron is active iff this is > 0.
    pub fn preactivation(&self, i: usize, x: &[f64]) -> f64 {
        self.w[i].iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b[i]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d_out()];
        for i in 0..self.neurons() {
            let a = self.preactivation(i, x).max(0.0);
            if a > 0.0 {
                for (o, ui) in out.iter_mut().zip(&self.u[i]) {
                    *o += ui * a;
                }
            }
        }
        out
    }

    /// Squared norms of the two layers; the bias folds into the input layer.
    pub fn layer_norms_sq(&self) -> (f64, f64) {
        let nu = self.u.iter().flatten().map(|v| v * v).sum();
        let nw = self.w.iter().flatten().map(|v| v * v).sum::<f64>()
            + self.b.iter().map(|v| v * v).sum::<f64>();
        (nu, nw)
    }
}

/// Loss `||f(x) - y||^2` and its exact gradient. The ReLU derivative at
/// exactly zero is taken as 0, so the contributing neurons are exactly those
/// with a strictly positive pre-activation.
pub fn relu_loss_grad(net: &TwoLayerRelu, x: &[f64], y: &[f64]) -> Result<(f64, ReluGrad)> {
    net.validate(x, y)?;
    let f = net.forward(x);
    let r: Vec<f64> = f.iter().zip(y).map(|(f, y)| f - y).collect();
    let loss = r.iter().map(|r| r * r).sum();

    let mut grad = ReluGrad {
        du: net.u.iter().map(|row| vec![0.0; row.len()]).collect(),
        dw: net.w.iter().map(|row| vec![0.0; row.len()]).collect(),
        db: vec![0.0; net.b.len()],
    };
    for i in 0..net.neurons() {
        let pre = net.preactivation(i, x);
        if pre <= 0.0 {
            continue;
        }
        let ur: f64 = net.u[i].iter().zip(&r).map(|(u, r)| u * r).sum();
        for (g, rk) in grad.du[i].iter_mut().zip(&r) {
            *g = 2.0 * rk * pre;
        }
        for (g, xk) in grad.dw[i].iter_mut().zip(x) {
            *g = 2.0 * ur * xk;
        }
        grad.db[i] = 2.0 * ur;
    }
    Ok((loss, grad))
}

/// Small tanh models: `f(x) = tanh(v x)` at depth 0 and
/// `f(x) = w tanh(u x)` at depth 1. Loss is `(f(x) - y)^2`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum TwoLayerTanh {
    Depth0,
    Depth1,
}

impl ScalarModel for TwoLayerTanh {
    fn dim(&self) -> usize {
        match self {
            TwoLayerTanh::Depth0 => 1,
            TwoLayerTanh::Depth1 => 2,
        }
    }

    fn loss(&self, params: &[f64], (x, y): ScalarSample, gamma: f64) -> f64 {
        let f = match self {
            TwoLayerTanh::Depth0 => (params[0] * x).tanh(),
            TwoLayerTanh::Depth1 => params[1] * (params[0] * x).tanh(),
        };
        let r = f - y;
        r * r + gamma * params.iter().map(|p| p * p).sum::<f64>()
    }

    fn grad(&self, params: &[f64], (x, y): ScalarSample, gamma: f64, out: &mut [f64]) {
        match self {
            TwoLayerTanh::Depth0 => {
                let t = (params[0] * x).tanh();
                out[0] = 2.0 * (t - y) * (1.0 - t * t) * x + 2.0 * gamma * params[0];
            }
            TwoLayerTanh::Depth1 => {
                let (u, w) = (params[0], params[1]);
                let t = (u * x).tanh();
                let r = w * t - y;
                out[0] = 2.0 * r * w * (1.0 - t * t) * x + 2.0 * gamma * u;
                out[1] = 2.0 * r * t + 2.0 * gamma * w;
            }
        }
    }

    fn output(&self, params: &[f64]) -> f64 {
        match self {
            TwoLayerTanh::Depth0 => params[0],
            TwoLayerTanh::Depth1 => params[0] * params[1],
        }
    }

    fn charges(&self, params: &[f64]) -> Vec<f64> {
        match self {
            TwoLayerTanh::Depth0 => vec![],
            TwoLayerTanh::Depth1 => vec![params[0] * params[0] - params[1] * params[1]],
        }
    }
}

pub fn tanh_loss_grad(
    model: TwoLayerTanh,
    params: &[f64],
    sample: ScalarSample,
) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; model.dim()];
    model.grad(params, sample, 0.0, &mut g);
    (model.loss(params, sample, 0.0), g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Central finite-difference gradient, the oracle for every analytic one.
    fn fd_grad<F: Fn(&[f64]) -> f64>(f: F, params: &[f64], h: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(params.len());
        let mut p = params.to_vec();
        for i in 0..params.len() {
            let orig = p[i];
            p[i] = orig + h;
            let fp = f(&p);
            p[i] = orig - h;
            let fm = f(&p);
            p[i] = orig;
            out.push((fp - fm) / (2.0 * h));
        }
        out
    }

    #[test]
    fn diag_loss_trivial_values() {
        let net = DiagonalNetwork::new(1, 1).unwrap();
        assert_relative_eq!(net.loss(&[0.0, 0.0], (1.0, 2.0), 0.0), 4.0);
        assert_relative_eq!(net.loss(&[2.0, 3.0], (1.0, 6.0), 0.0), 0.0);
    }

    #[test]
    fn diag_loss_hand_evaluated() {
        // v = 1*1*1 + 1*1*(-1) = 0; loss = 1 + 0.1 * 6 = 1.6
        let net = DiagonalNetwork::new(2, 2).unwrap();
        let p = [1.0, 1.0, 1.0, 1.0, 1.0, -1.0];
        assert_relative_eq!(net.loss(&p, (1.0, 1.0), 0.1), 1.6, max_relative = 1e-14);
    }

    #[test]
    fn diag_grad_zero_weights() {
        let net = DiagonalNetwork::new(3, 2).unwrap();
        let p = vec![0.0; net.dim()];
        let g = diag_grad(&net, &p, (1.0, 1.0), 0.0);
        assert!(g.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn diag_grad_depth0() {
        let net = DiagonalNetwork::new(1, 0).unwrap();
        let g = diag_grad(&net, &[1.0], (1.0, 0.0), 0.0);
        assert_relative_eq!(g[0], 2.0);
    }

    #[test]
    fn diag_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let width = rng.random_range(1..4usize);
            let depth = rng.random_range(0..4usize);
            let net = DiagonalNetwork::new(width, depth).unwrap();
            let p: Vec<f64> = (0..net.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let sample = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let gamma = rng.random_range(0.0..0.2);
            let g = diag_grad(&net, &p, sample, gamma);
            let fd = fd_grad(|p| net.loss(p, sample, gamma), &p, 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                assert_relative_eq!(a, b, max_relative = 1e-5, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn diag_rescaling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = DiagonalNetwork::new(2, 2).unwrap();
        for _ in 0..50 {
            let p: Vec<f64> = (0..net.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let sample = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let lambda: f64 = rng.random_range(0.1..10.0);
            let mut q = p.clone();
            // Rescale factors 0 and 2 of subnetwork 1.
            q[3] *= lambda;
            q[5] /= lambda;
            assert_relative_eq!(
                net.loss(&p, sample, 0.0),
                net.loss(&q, sample, 0.0),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn diag_output_permutation_invariant() {
        let net = DiagonalNetwork::new(3, 1).unwrap();
        let p = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let q = [5.0, 6.0, 1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(net.output(&p), net.output(&q), max_relative = 1e-15);
    }

    fn random_relu(rng: &mut ChaCha8Rng, d: usize, d_in: usize, d_out: usize) -> TwoLayerRelu {
        TwoLayerRelu {
            u: (0..d)
                .map(|_| (0..d_out).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            w: (0..d)
                .map(|_| (0..d_in).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            b: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn relu_zero_net_zero_grad() {
        let net = TwoLayerRelu {
            u: vec![vec![0.0; 2]; 3],
            w: vec![vec![0.0; 2]; 3],
            b: vec![0.0; 3],
        };
        let (loss, g) = relu_loss_grad(&net, &[1.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.du.iter().flatten().all(|&v| v == 0.0));
        assert!(g.dw.iter().flatten().all(|&v| v == 0.0));
        assert!(g.db.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_inactive_neurons_have_zero_u_gradient() {
        let net = TwoLayerRelu {
            u: vec![vec![1.0], vec![-0.5]],
            w: vec![vec![1.0], vec![2.0]],
            b: vec![-10.0, -10.0],
        };
        let (_, g) = relu_loss_grad(&net, &[1.0], &[3.0]).unwrap();
        assert!(g.du.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let (d, d_in, d_out) = (3, 2, 2);
            let net = random_relu(&mut rng, d, d_in, d_out);
            let x: Vec<f64> = (0..d_in).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..d_out).map(|_| rng.random_range(-1.0..1.0)).collect();
            // Stay away from ReLU kinks where the loss is not differentiable.
            if (0..d).any(|i| net.preactivation(i, &x).abs() < 1e-3) {
                continue;
            }
            let (_, g) = relu_loss_grad(&net, &x, &y).unwrap();
            let flat: Vec<f64> = g
                .du
                .iter()
                .flatten()
                .chain(g.dw.iter().flatten())
                .chain(g.db.iter())
                .copied()
                .collect();
            let pack = |net: &TwoLayerRelu| -> Vec<f64> {
                net.u
                    .iter()
                    .flatten()
                    .chain(net.w.iter().flatten())
                    .chain(net.b.iter())
                    .copied()
                    .collect()
            };
            let p0 = pack(&net);
            let eval = |p: &[f64]| {
                let mut n = net.clone();
                let mut it = p.iter().copied();
                for row in n.u.iter_mut().chain(n.w.iter_mut()) {
                    for v in row.iter_mut() {
                        *v = it.next().unwrap();
                    }
                }
                for v in n.b.iter_mut() {
                    *v = it.next().unwrap();
                }
                relu_loss_grad(&n, &x, &y).unwrap().0
            };
            let fd = fd_grad(eval, &p0, 1e-6);
            for (a, b) in flat.iter().zip(&fd) {
                assert_relative_eq!(a, b, max_relative = 1e-5, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn relu_rescaling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..50 {
            let net = random_relu(&mut rng, 3, 2, 2);
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lambda: f64 = rng.random_range(0.1..10.0);
            let mut scaled = net.clone();
            let i = rng.random_range(0..3usize);
            for v in scaled.u[i].iter_mut() {
                *v *= lambda;
            }
            for v in scaled.w[i].iter_mut() {
                *v /= lambda;
            }
            scaled.b[i] /= lambda;
            let l0 = relu_loss_grad(&net, &x, &y).unwrap().0;
            let l1 = relu_loss_grad(&scaled, &x, &y).unwrap().0;
            assert_relative_eq!(l0, l1, max_relative = 1e-12);
        }
    }

    #[test]
    fn relu_dimension_mismatch() {
        let net = TwoLayerRelu { u: vec![vec![1.0]], w: vec![vec![1.0]], b: vec![0.0] };
        assert!(relu_loss_grad(&net, &[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn tanh_trivial_points() {
        let (l, g) = tanh_loss_grad(TwoLayerTanh::Depth0, &[0.0], (1.0, 0.0));
        assert_eq!(l, 0.0);
        assert_eq!(g[0], 0.0);
        // u = w = 0 is a saddle with zero gradient.
        let (_, g) = tanh_loss_grad(TwoLayerTanh::Depth1, &[0.0, 0.0], (1.0, 1.0));
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tanh_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for model in [TwoLayerTanh::Depth0, TwoLayerTanh::Depth1] {
            for _ in 0..50 {
                let p: Vec<f64> =
                    (0..model.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let sample = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let (_, g) = tanh_loss_grad(model, &p, sample);
                let fd = fd_grad(|p| model.loss(p, sample, 0.0), &p, 1e-6);
                for (a, b) in g.iter().zip(&fd) {
                    assert_relative_eq!(a, b, max_relative = 1e-5, epsilon = 1e-7);
                }
            }
        }
    }
}
