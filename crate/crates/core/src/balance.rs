//! Layer noise matrices, the balance residual `u^T C1 u - w^T C2 w`, the
//! balanced rescaling factor `lambda*`, norm-ratio bounds, and the
//! per-neuron ReLU full-rank check.
//!
//! For a layer pair `(u, w)` with rescaling symmetry, write the per-sample
//! loss as a function of the products `u_i w_k` and let
//! `A_{ki} = d loss / d(u_i w_k)`. The noise matrices are the population
//! covariances `C1 = E[A^T A] - E[A^T] E[A]` (u side) and
//! `C2 = E[A A^T] - E[A] E[A^T]` (w side). Gradient noise drives the layer
//! norms toward `u^T C1 u = w^T C2 w`.

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::trajectory_rng;
use crate::models::{relu_loss_grad, TwoLayerRelu};
use crate::moments::SampleSet;
use crate::{Error, Result};

/// Symmetry tolerance for the noise-matrix invariants.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative eigenvalue cut below which a noise matrix counts as rank
/// deficient for the norm-ratio bounds.
pub const RANK_TOL: f64 = 1e-10;
/// Relative eigenvalue cut for the "full-rank" flag in neuron reports.
pub const FULL_RANK_TOL: f64 = 1e-8;

/// Empirical covariances of the product-coordinate gradient `A`.
#[derive(Debug, Clone)]
pub struct NoiseMatrices {
    /// `d_u x d_u`, the covariance seen by the output-side layer.
    pub c1: DMatrix<f64>,
    /// `d_w x d_w`, the covariance seen by the input-side layer.
    pub c2: DMatrix<f64>,
}

fn check_covariance(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Domain(format!("{name} is not symmetric")));
            }
        }
    }
    let eig = m.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().cloned().fold(0.0f64, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -SYMMETRY_TOL * max.max(f64::MIN_POSITIVE) {
        return Err(Error::Domain(format!(
            "{name} has negative eigenvalue {min:.3e}"
        )));
    }
    Ok(())
}

impl NoiseMatrices {
    pub fn new(c1: DMatrix<f64>, c2: DMatrix<f64>) -> Result<Self> {
        check_covariance(&c1, "C1")?;
        check_covariance(&c2, "C2")?;
        Ok(Self { c1, c2 })
    }

    /// Build both covariances from the per-sample matrices `A`
    /// (`d_w` rows, `d_u` columns).
    pub fn from_product_gradients(a_samples: &[DMatrix<f64>]) -> Result<Self> {
        let first = a_samples
            .first()
            .ok_or(Error::DegenerateSampleSet(0))?;
        let (dw, du) = first.shape();
        let n = a_samples.len() as f64;
        let mut mean = DMatrix::<f64>::zeros(dw, du);
        let mut ata = DMatrix::<f64>::zeros(du, du);
        let mut aat = DMatrix::<f64>::zeros(dw, dw);
        for a in a_samples {
            mean += a;
            ata += a.transpose() * a;
            aat += a * a.transpose();
        }
        mean /= n;
        let c1 = ata / n - mean.transpose() * &mean;
        let c2 = aat / n - &mean * mean.transpose();
        Self::new(c1, c2)
    }

    fn eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
        let eig = m.clone().symmetric_eigen().eigenvalues;
        let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        (min, max)
    }
}

/// Balance state of a layer pair at one parameter snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceReport {
    /// `u^T C1 u`.
    pub lhs: f64,
    /// `w^T C2 w`.
    pub rhs: f64,
    /// `lhs - rhs`; the stationary condition of the balance law is 0.
    pub residual: f64,
    /// Conserved charge `||u||^2 - ||w||^2` of noiseless gradient flow.
    pub charge: f64,
    /// Rescaling factor that balances the pair; `inf` encodes divergence.
    pub lambda_star: f64,
    /// `(low, high)` bounds on `||u||^2 / ||w||^2` at stationarity.
    pub ratio_bounds: (f64, f64),
}

/// Check loss invariance under `(u, w) -> (lambda u, w / lambda)` at a few
/// rescaling factors. `loss` evaluates the model on one fixed sample.
pub fn verify_rescaling_symmetry<F>(loss: F, u: &[f64], w: &[f64]) -> Result<()>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let base = loss(u, w);
    for lambda in [0.37, 1.0, 2.9] {
        let us: Vec<f64> = u.iter().map(|v| v * lambda).collect();
        let ws: Vec<f64> = w.iter().map(|v| v / lambda).collect();
        let scaled = loss(&us, &ws);
        if (scaled - base).abs() > 1e-9 * base.abs().max(1.0) {
            return Err(Error::NoRescalingSymmetry(format!(
                "loss changes by {:.3e} at lambda = {lambda}",
                scaled - base
            )));
        }
    }
    Ok(())
}

/// Noise matrices for the diagonal linear model `f(x) = sum_i u_i w_i x`.
/// The product-coordinate gradient is diagonal,
/// `A = 2 x (v x - y) I`, so `C1 = C2 = 4 Var[x (v x - y)] I`.
pub fn estimate_noise_matrices_linear(
    u: &[f64],
    w: &[f64],
    data: &SampleSet,
) -> Result<NoiseMatrices> {
    if u.len() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "u has {} entries, w has {}",
            u.len(),
            w.len()
        )));
    }
    verify_rescaling_symmetry(
        |us, ws| {
            let v: f64 = us.iter().zip(ws).map(|(a, b)| a * b).sum();
            let (x, y) = data.pair(0);
            (v * x - y).powi(2)
        },
        u,
        w,
    )?;
    let v: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum();
    let n = data.len() as f64;
    let (mut s, mut s2) = (0.0, 0.0);
    for (x, y) in data.iter() {
        let h = 2.0 * x * (v * x - y);
        s += h;
        s2 += h * h;
    }
    let c0 = (s2 / n - (s / n) * (s / n)).max(0.0);
    let dim = u.len();
    let c = DMatrix::from_diagonal_element(dim, dim, c0);
    NoiseMatrices::new(c.clone(), c)
}

/// `u^T C1 u - w^T C2 w`.
pub fn balance_residual(u: &[f64], w: &[f64], nm: &NoiseMatrices) -> Result<f64> {
    Ok(quadratic_form(&nm.c1, u)? - quadratic_form(&nm.c2, w)?)
}

fn quadratic_form(m: &DMatrix<f64>, v: &[f64]) -> Result<f64> {
    if m.nrows() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{}, vector has {} entries",
            m.nrows(),
            m.ncols(),
            v.len()
        )));
    }
    let mut acc = 0.0;
    for i in 0..v.len() {
        for j in 0..v.len() {
            acc += v[i] * m[(i, j)] * v[j];
        }
    }
    Ok(acc)
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Rescaling factor `lambda*` such that `(lambda* u, w / lambda*)` balances
/// the noise traces:
/// `((T w^T C2 w + gamma ||w||^2) / (T u^T C1 u + gamma ||u||^2))^{1/4}`.
/// Returns infinity when the denominator vanishes but the numerator does
/// not; both vanishing is the degenerate error.
pub fn lambda_star(
    u: &[f64],
    w: &[f64],
    nm: &NoiseMatrices,
    temp: f64,
    gamma: f64,
) -> Result<f64> {
    if temp <= 0.0 && gamma <= 0.0 {
        return Err(Error::InvalidConfig(
            "lambda_star needs T > 0 or gamma > 0".into(),
        ));
    }
    let num = temp * quadratic_form(&nm.c2, w)? + gamma * norm_sq(w);
    let den = temp * quadratic_form(&nm.c1, u)? + gamma * norm_sq(u);
    if den == 0.0 {
        if num == 0.0 {
            return Err(Error::DegenerateNoiseTraces);
        }
        return Ok(f64::INFINITY);
    }
    Ok((num / den).powf(0.25))
}

/// Eigenvalue bounds on the stationary `||u||^2 / ||w||^2`:
/// `(min_eig(C2) / max_eig(C1), max_eig(C2) / min_eig(C1))`. A rank
/// deficient matrix makes the bounds vacuous, `(0, inf)`.
pub fn norm_ratio_bounds(nm: &NoiseMatrices) -> (f64, f64) {
    let (min1, max1) = NoiseMatrices::eig_extremes(&nm.c1);
    let (min2, max2) = NoiseMatrices::eig_extremes(&nm.c2);
    let cut = |min: f64, max: f64| min > RANK_TOL * max.max(f64::MIN_POSITIVE);
    if !cut(min1, max1) || !cut(min2, max2) {
        return (0.0, f64::INFINITY);
    }
    (min2 / max1, max2 / min1)
}

/// Full snapshot report for a layer pair.
pub fn balance_report(
    u: &[f64],
    w: &[f64],
    nm: &NoiseMatrices,
    temp: f64,
    gamma: f64,
) -> Result<BalanceReport> {
    let lhs = quadratic_form(&nm.c1, u)?;
    let rhs = quadratic_form(&nm.c2, w)?;
    Ok(BalanceReport {
        lhs,
        rhs,
        residual: lhs - rhs,
        charge: norm_sq(u) - norm_sq(w),
        lambda_star: lambda_star(u, w, nm, temp, gamma)?,
        ratio_bounds: norm_ratio_bounds(nm),
    })
}

/// Vector-valued regression dataset for the ReLU experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorSampleSet {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
}

impl VectorSampleSet {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// `x ~ N(0, I_d)`, `y = x + eps` with `eps ~ N(0, sigma^2 I_d)`; the label
/// noise has full-rank covariance by construction.
pub fn synth_vector_dataset(d: usize, sigma: f64, n: usize, seed: u64) -> VectorSampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|xi| xi + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        xs.push(x);
        ys.push(y);
    }
    VectorSampleSet { xs, ys }
}

/// Per-neuron noise matrices of the two-layer ReLU net. For neuron `i` the
/// product-coordinate gradient is `A = 2 1[active] x~ r^T` with the bias
/// folded in as `x~ = (x, 1)` and residual `r = f(x) - y`; the overall layer
/// matrices are block diagonal across neurons.
pub fn estimate_relu_noise_matrices(
    net: &TwoLayerRelu,
    neuron: usize,
    data: &VectorSampleSet,
) -> Result<NoiseMatrices> {
    if neuron >= net.neurons() {
        return Err(Error::DimensionMismatch(format!(
            "neuron {neuron} out of range ({} neurons)",
            net.neurons()
        )));
    }
    if data.is_empty() {
        return Err(Error::DegenerateSampleSet(0));
    }
    let du = net.d_out();
    let dw = net.d_in() + 1;
    let n = data.len() as f64;
    let mut mean = DMatrix::<f64>::zeros(dw, du);
    let mut ata = DMatrix::<f64>::zeros(du, du);
    let mut aat = DMatrix::<f64>::zeros(dw, dw);
    let mut a = DMatrix::<f64>::zeros(dw, du);
    for (x, y) in data.xs.iter().zip(&data.ys) {
        a.fill(0.0);
        if net.preactivation(neuron, x) > 0.0 {
            let f = net.forward(x);
            for k in 0..dw {
                let xt = if k < net.d_in() { x[k] } else { 1.0 };
                for i in 0..du {
                    a[(k, i)] = 2.0 * xt * (f[i] - y[i]);
                }
            }
        }
        mean += &a;
        ata += a.transpose() * &a;
        aat += &a * a.transpose();
    }
    mean /= n;
    let c1 = ata / n - mean.transpose() * &mean;
    let c2 = aat / n - &mean * mean.transpose();
    NoiseMatrices::new(c1, c2)
}

/// Layer-aggregated balance traces `(lhs, rhs)` of the ReLU net:
/// `lhs = sum_i u_i^T C1^(i) u_i`, `rhs = sum_i w~_i^T C2^(i) w~_i`.
pub fn relu_layer_balance(net: &TwoLayerRelu, data: &VectorSampleSet) -> Result<(f64, f64)> {
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for i in 0..net.neurons() {
        let nm = estimate_relu_noise_matrices(net, i, data)?;
        let mut wt = net.w[i].clone();
        wt.push(net.b[i]);
        lhs += quadratic_form(&nm.c1, &net.u[i])?;
        rhs += quadratic_form(&nm.c2, &wt)?;
    }
    Ok((lhs, rhs))
}

/// Per-neuron rank diagnostics for the ReLU noise matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeuronRankReport {
    pub neuron: usize,
    /// Fraction of samples on which the neuron is active.
    pub p_active: f64,
    pub min_eig_c1: f64,
    pub min_eig_c2: f64,
    pub max_eig_c1: f64,
    pub max_eig_c2: f64,
    /// Both matrices pass the `FULL_RANK_TOL` relative eigenvalue cut.
    pub full_rank: bool,
}

/// Rank check output; `noiseless_regime` flags a (near-)perfect fit where
/// gradient noise vanishes and the rank guarantee degrades.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReluRankCheck {
    pub neurons: Vec<NeuronRankReport>,
    pub mean_loss: f64,
    pub noiseless_regime: bool,
}

pub fn relu_full_rank_check(net: &TwoLayerRelu, data: &VectorSampleSet) -> Result<ReluRankCheck> {
    if data.is_empty() {
        return Err(Error::DegenerateSampleSet(0));
    }
    let mut mean_loss = 0.0;
    for (x, y) in data.xs.iter().zip(&data.ys) {
        let (loss, _) = relu_loss_grad(net, x, y)?;
        mean_loss += loss;
    }
    mean_loss /= data.len() as f64;

    let mut neurons = Vec::with_capacity(net.neurons());
    for i in 0..net.neurons() {
        let active = data
            .xs
            .iter()
            .filter(|x| net.preactivation(i, x) > 0.0)
            .count();
        let p_active = active as f64 / data.len() as f64;
        let nm = estimate_relu_noise_matrices(net, i, data)?;
        let (min1, max1) = NoiseMatrices::eig_extremes(&nm.c1);
        let (min2, max2) = NoiseMatrices::eig_extremes(&nm.c2);
        let pass = |min: f64, max: f64| min > FULL_RANK_TOL * max.max(f64::MIN_POSITIVE);
        neurons.push(NeuronRankReport {
            neuron: i,
            p_active,
            min_eig_c1: min1,
            min_eig_c2: min2,
            max_eig_c1: max1,
            max_eig_c2: max2,
            full_rank: pass(min1, max1) && pass(min2, max2),
        });
    }
    Ok(ReluRankCheck {
        neurons,
        mean_loss,
        noiseless_regime: mean_loss < 1e-12,
    })
}

/// One recorded point of a ReLU balance training trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceTracePoint {
    pub step: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub charge: f64,
    /// `||u||^2 / ||w~||^2`.
    pub norm_ratio: f64,
}

/// Random ReLU net with i.i.d. `N(0, scale^2)` weights and biases.
pub fn random_relu_net(
    neurons: usize,
    d_in: usize,
    d_out: usize,
    scale: f64,
    seed: u64,
) -> TwoLayerRelu {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    TwoLayerRelu {
        u: (0..neurons).map(|_| draw(d_out)).collect(),
        w: (0..neurons).map(|_| draw(d_in)).collect(),
        b: draw(neurons),
    }
}

/// Train the ReLU net with single-sample SGD, recording the aggregated
/// balance trace every `record_every` steps (including step 0).
pub fn train_relu_sgd(
    net: &mut TwoLayerRelu,
    data: &VectorSampleSet,
    eta: f64,
    steps: usize,
    record_every: usize,
    seed: u64,
) -> Result<Vec<BalanceTracePoint>> {
    if data.is_empty() {
        return Err(Error::DegenerateSampleSet(0));
    }
    if record_every == 0 {
        return Err(Error::InvalidConfig("record_every must be >= 1".into()));
    }
    let mut rng = trajectory_rng(seed, 0);
    let mut trace = Vec::new();
    let record = |step: usize, net: &TwoLayerRelu, trace: &mut Vec<BalanceTracePoint>| -> Result<()> {
        let (lhs, rhs) = relu_layer_balance(net, data)?;
        let (nu, nw) = net.layer_norms_sq();
        trace.push(BalanceTracePoint {
            step,
            lhs,
            rhs,
            residual: lhs - rhs,
            charge: nu - nw,
            norm_ratio: nu / nw,
        });
        Ok(())
    };
    record(0, net, &mut trace)?;
    for step in 1..=steps {
        let idx = rng.random_range(0..data.len());
        let (_, g) = relu_loss_grad(net, &data.xs[idx], &data.ys[idx])?;
        for i in 0..net.neurons() {
            for (p, d) in net.u[i].iter_mut().zip(&g.du[i]) {
                *p -= eta * d;
            }
            for (p, d) in net.w[i].iter_mut().zip(&g.dw[i]) {
                *p -= eta * d;
            }
            net.b[i] -= eta * g.db[i];
        }
        if step % record_every == 0 {
            record(step, net, &mut trace)?;
        }
    }
    Ok(trace)
}
