//! Time steppers: discrete SGD, full-batch GD, GD with injected isotropic
//! Gaussian noise, the Euler–Maruyama integration of the gradient-covariance
//! SDE, and the reduced one-dimensional SDE for the model output `v`.
//!
//! One SDE step advances time by `dt = eta`, so step counts are comparable
//! across modes. Minibatches are drawn i.i.d. uniform with replacement.

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::models::ScalarModel;
use crate::moments::{MomentSummary, SampleSet};
use crate::{Error, Result};

/// Any parameter beyond this magnitude (or non-finite) counts as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Reflecting wall for the reduced SDE integrator (see
/// [`run_reduced_trajectory`]). The heaviest supported stationary tail
/// decays like `|v|^{-7/2}`, so the mass beyond this scale is below 1e-15.
pub const REDUCED_V_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Sgd,
    Gd,
    LangevinGd,
    Sde,
    ReducedSde,
}

/// Stepper configuration. The temperature is always `T = eta / batch_size`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepperConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub steps: usize,
    pub seed: u64,
    pub mode: Mode,
    pub record_every: usize,
    /// Standard deviation multiplier for [`Mode::LangevinGd`]; the injected
    /// per-coordinate noise is `noise_scale * sqrt(eta)` per step.
    pub noise_scale: f64,
    /// Number of Euler–Maruyama substeps per recorded step for the SDE
    /// modes. The default 1 keeps `dt = eta` exactly; larger values refine
    /// the integration without changing `T` or the trajectory length.
    pub substeps: usize,
    /// Keep full parameter snapshots at recorded steps.
    pub snapshots: bool,
}

impl StepperConfig {
    pub fn new(eta: f64, batch_size: usize, steps: usize, seed: u64, mode: Mode) -> Result<Self> {
        let cfg = Self {
            eta,
            batch_size,
            gamma: 0.0,
            steps,
            seed,
            mode,
            record_every: 1,
            noise_scale: 0.0,
            substeps: 1,
            snapshots: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 {
            return Err(Error::InvalidConfig("eta must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.record_every == 0 || self.substeps == 0 {
            return Err(Error::InvalidConfig("record_every and substeps must be >= 1".into()));
        }
        Ok(())
    }

    /// Temperature `T = eta / S`.
    pub fn temperature(&self) -> f64 {
        self.eta / self.batch_size as f64
    }
}

/// RNG for trajectory `index` under a base seed. Each trajectory owns its
/// generator; parallel sweeps get independent streams of the same seed.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn check_finite(params: &[f64], step: usize) -> Result<()> {
    if params.iter().any(|p| !p.is_finite() || p.abs() > DIVERGENCE_THRESHOLD) {
        return Err(Error::Diverged { step });
    }
    Ok(())
}

fn mean_gradient<M: ScalarModel>(
    model: &M,
    params: &[f64],
    data: &SampleSet,
    gamma: f64,
    buf: &mut [f64],
    acc: &mut [f64],
) {
    acc.fill(0.0);
    for (x, y) in data.iter() {
        model.grad(params, (x, y), gamma, buf);
        for (a, g) in acc.iter_mut().zip(buf.iter()) {
            *a += g;
        }
    }
    let n = data.len() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
}

/// One SGD update with a fresh minibatch of `cfg.batch_size` samples.
pub fn sgd_step<M: ScalarModel>(
    model: &M,
    params: &mut [f64],
    data: &SampleSet,
    cfg: &StepperConfig,
    rng: &mut ChaCha8Rng,
    step: usize,
) -> Result<()> {
    let dim = model.dim();
    let mut buf = vec![0.0; dim];
    let mut acc = vec![0.0; dim];
    for _ in 0..cfg.batch_size {
        let idx = rng.random_range(0..data.len());
        model.grad(params, data.pair(idx), cfg.gamma, &mut buf);
        for (a, g) in acc.iter_mut().zip(buf.iter()) {
            *a += g;
        }
    }
    let scale = cfg.eta / cfg.batch_size as f64;
    for (p, a) in params.iter_mut().zip(acc.iter()) {
        *p -= scale * a;
    }
    check_finite(params, step)
}

/// Full-batch gradient descent update.
pub fn gd_step<M: ScalarModel>(
    model: &M,
    params: &mut [f64],
    data: &SampleSet,
    cfg: &StepperConfig,
    step: usize,
) -> Result<()> {
    let dim = model.dim();
    let mut buf = vec![0.0; dim];
    let mut acc = vec![0.0; dim];
    mean_gradient(model, params, data, cfg.gamma, &mut buf, &mut acc);
    for (p, a) in params.iter_mut().zip(acc.iter()) {
        *p -= cfg.eta * a;
    }
    check_finite(params, step)
}

/// GD plus additive isotropic Gaussian noise of standard deviation
/// `noise_scale * sqrt(eta)` per coordinate, the simple-diffusion reference.
pub fn langevin_gd_step<M: ScalarModel>(
    model: &M,
    params: &mut [f64],
    data: &SampleSet,
    cfg: &StepperConfig,
    rng: &mut ChaCha8Rng,
    step: usize,
) -> Result<()> {
    gd_step(model, params, data, cfg, step)?;
    let sd = cfg.noise_scale * cfg.eta.sqrt();
    for p in params.iter_mut() {
        let xi: f64 = rng.sample(StandardNormal);
        *p += sd * xi;
    }
    check_finite(params, step)
}

/// Symmetric square root of the empirical per-sample gradient covariance.
/// Negative eigenvalues within `1e-12 * max` of zero are clipped; anything
/// more negative indicates an estimation bug and is an error.
fn covariance_sqrt(cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = cov.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = 1e-12 * max_eig.max(f64::MIN_POSITIVE);
    let mut sqrt_vals = eig.eigenvalues.clone();
    for v in sqrt_vals.iter_mut() {
        if *v < -tol {
            return Err(Error::Domain(format!(
                "covariance eigenvalue {v:.3e} below -{tol:.3e}"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let d = DMatrix::from_diagonal(&sqrt_vals);
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Euler–Maruyama step of `d theta = -grad L dt + sqrt(T C(theta)) dW` with
/// `dt = eta / substeps`, `C` the empirical per-sample gradient covariance.
pub fn sde_step<M: ScalarModel>(
    model: &M,
    params: &mut [f64],
    data: &SampleSet,
    cfg: &StepperConfig,
    rng: &mut ChaCha8Rng,
    step: usize,
) -> Result<()> {
    let dim = model.dim();
    let temp = cfg.temperature();
    let dt = cfg.eta / cfg.substeps as f64;
    let n = data.len() as f64;
    let mut buf = vec![0.0; dim];
    for _ in 0..cfg.substeps {
        let mut mean = vec![0.0; dim];
        let mut second = DMatrix::<f64>::zeros(dim, dim);
        for (x, y) in data.iter() {
            model.grad(params, (x, y), cfg.gamma, &mut buf);
            for i in 0..dim {
                mean[i] += buf[i];
                for j in 0..dim {
                    second[(i, j)] += buf[i] * buf[j];
                }
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut cov = second / n;
        for i in 0..dim {
            for j in 0..dim {
                cov[(i, j)] -= mean[i] * mean[j];
            }
        }
        let root = covariance_sqrt(cov)?;
        let xi: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let amp = (temp * dt).sqrt();
        for i in 0..dim {
            let noise: f64 = (0..dim).map(|j| root[(i, j)] * xi[j]).sum();
            params[i] += -mean[i] * dt + amp * noise;
        }
    }
    check_finite(params, step)
}

/// Drift and diffusion of the reduced SDE for `v` at depth `D` and effective
/// width `d`. For `D = 0` this is the plain depth-0 SDE (no Ito correction);
/// for `D >= 1` it includes the Ito drift of the subnetwork reduction.
/// Weight decay shifts `beta2 -> beta2 - gamma` for `D >= 1` and
/// `beta1 -> beta1 + gamma` for `D = 0`.
pub fn reduced_drift_diffusion(
    v: f64,
    m: &MomentSummary,
    temp: f64,
    gamma: f64,
    depth: usize,
    width: usize,
) -> (f64, f64) {
    let g = m.noise_quadratic(v);
    if depth == 0 {
        let drift = -2.0 * ((m.beta1 + gamma) * v - m.beta2);
        return (drift, 4.0 * temp * g);
    }
    if v == 0.0 {
        return (0.0, 0.0);
    }
    let dp1 = (depth + 1) as f64;
    let dd = depth as f64;
    let wf = width as f64;
    let beta2 = m.beta2 - gamma;
    let abs_v = v.abs();
    let w1 = wf.powf(2.0 / dp1 - 1.0);
    let w2 = wf.powf(4.0 / dp1 - 2.0);
    let front = 2.0 * dp1 * w1 * abs_v.powf(2.0 * dd / dp1);
    // The Ito term is v^3 |v|^{-4/(D+1)}; the combined exponent keeps it
    // finite for denormal |v|, where the split form underflows to 0 * inf.
    let ito = 2.0 * dp1 * dd * w2 * v.signum() * abs_v.powf(3.0 - 4.0 / dp1) * temp * g;
    let drift = -front * (m.beta1 * v - beta2) + ito;
    let b = front * (temp * g).max(0.0).sqrt();
    (drift, b * b)
}

/// One Euler–Maruyama step of the reduced SDE. `v = 0` is absorbing for
/// `D >= 1` (every term carries a positive power of `|v|`).
pub fn reduced_v_step(
    v: f64,
    m: &MomentSummary,
    temp: f64,
    gamma: f64,
    dt: f64,
    depth: usize,
    width: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::Diverged { step: 0 });
    }
    let (drift, b_sq) = reduced_drift_diffusion(v, m, temp, gamma, depth, width);
    let noise = match rng {
        Some(rng) => {
            let xi: f64 = rng.sample(StandardNormal);
            b_sq.sqrt() * dt.sqrt() * xi
        }
        None => 0.0,
    };
    let next = v + drift * dt + noise;
    if !next.is_finite() || next.abs() > DIVERGENCE_THRESHOLD {
        return Err(Error::Diverged { step: 0 });
    }
    Ok(next)
}

/// Time series recorded along a trajectory: the model output, the Noether
/// charges, and optional full parameter snapshots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<usize>,
    pub v_values: Vec<f64>,
    pub charges: Vec<Vec<f64>>,
    pub snapshots: Option<Vec<Vec<f64>>>,
    pub final_params: Vec<f64>,
    /// Step index at which the trajectory diverged, if it did; the record
    /// then holds the partial history up to that step.
    pub diverged_at: Option<usize>,
}

impl TrajectoryRecord {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// CSV with header `step,v,charge_1,...`.
    pub fn to_csv(&self) -> String {
        let n_charges = self.charges.first().map_or(0, Vec::len);
        let mut out = String::from("step,v");
        for i in 1..=n_charges {
            out.push_str(&format!(",charge_{i}"));
        }
        out.push('\n');
        for (i, (&t, &v)) in self.times.iter().zip(&self.v_values).enumerate() {
            out.push_str(&format!("{t},{v}"));
            for c in &self.charges[i] {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Run the configured stepper for `cfg.steps` steps, recording every
/// `cfg.record_every` steps (plus the initial state). Divergence yields a
/// flagged partial record, not an error.
pub fn run_trajectory<M: ScalarModel>(
    model: &M,
    initial: &[f64],
    data: &SampleSet,
    cfg: &StepperConfig,
) -> Result<TrajectoryRecord> {
    run_trajectory_indexed(model, initial, data, cfg, 0)
}

/// Like [`run_trajectory`] but with an explicit trajectory index for the
/// per-trajectory RNG stream.
pub fn run_trajectory_indexed<M: ScalarModel>(
    model: &M,
    initial: &[f64],
    data: &SampleSet,
    cfg: &StepperConfig,
    traj_index: u64,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::DegenerateSampleSet(0));
    }
    if cfg.mode == Mode::ReducedSde {
        return Err(Error::InvalidConfig(
            "ReducedSde mode runs through run_reduced_trajectory".into(),
        ));
    }
    let mut rng = trajectory_rng(cfg.seed, traj_index);
    let mut params = initial.to_vec();
    let mut rec = TrajectoryRecord {
        times: Vec::new(),
        v_values: Vec::new(),
        charges: Vec::new(),
        snapshots: cfg.snapshots.then(Vec::new),
        final_params: Vec::new(),
        diverged_at: None,
    };
    let record = |step: usize, params: &[f64], rec: &mut TrajectoryRecord| {
        rec.times.push(step);
        rec.v_values.push(model.output(params));
        rec.charges.push(model.charges(params));
        if let Some(s) = rec.snapshots.as_mut() {
            s.push(params.to_vec());
        }
    };
    record(0, &params, &mut rec);
    for step in 1..=cfg.steps {
        let res = match cfg.mode {
            Mode::Sgd => sgd_step(model, &mut params, data, cfg, &mut rng, step),
            Mode::Gd => gd_step(model, &mut params, data, cfg, step),
            Mode::LangevinGd => langevin_gd_step(model, &mut params, data, cfg, &mut rng, step),
            Mode::Sde => sde_step(model, &mut params, data, cfg, &mut rng, step),
            Mode::ReducedSde => unreachable!(),
        };
        match res {
            Ok(()) => {}
            Err(Error::Diverged { .. }) => {
                rec.diverged_at = Some(step);
                break;
            }
            Err(e) => return Err(e),
        }
        if step % cfg.record_every == 0 {
            record(step, &params, &mut rec);
        }
    }
    rec.final_params = params;
    Ok(rec)
}

/// Run the reduced one-dimensional SDE for `v`. Each recorded step advances
/// time by `eta` in (at least) `cfg.substeps` Euler–Maruyama increments.
///
/// The diffusion coefficient grows like `|v|^2` in the tail, where a fixed
/// step size makes Euler–Maruyama explosive even though the continuous
/// process is recurrent. Individual increments are therefore capped so the
/// typical noise kick stays a small fraction of the current scale; the cap
/// only engages on deep tail excursions and leaves the bulk step size (and
/// cost) unchanged. Excursions are additionally reflected at
/// [`REDUCED_V_CAP`]: the stationary mass beyond it is negligible for every
/// supported case, and a hard wall there keeps the inner step size bounded
/// away from zero.
pub fn run_reduced_trajectory(
    v0: f64,
    moments: &MomentSummary,
    cfg: &StepperConfig,
    depth: usize,
    width: usize,
    traj_index: u64,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let mut rng = trajectory_rng(cfg.seed, traj_index);
    let temp = cfg.temperature();
    let dt = cfg.eta / cfg.substeps as f64;
    let mut v = v0;
    let mut rec = TrajectoryRecord {
        times: vec![0],
        v_values: vec![v0],
        charges: vec![vec![]],
        snapshots: None,
        final_params: Vec::new(),
        diverged_at: None,
    };
    'outer: for step in 1..=cfg.steps {
        let mut remaining = cfg.eta;
        while remaining > 0.0 {
            // Stability cap: keep the one-sigma noise increment below a
            // tenth of the current scale, `b^2 h <= (0.1 max(|v|, 1))^2`.
            let (_, b_sq) = reduced_drift_diffusion(v, moments, temp, cfg.gamma, depth, width);
            let mut h = dt.min(remaining);
            if b_sq > 0.0 {
                let scale = v.abs().max(1.0);
                h = h.min(0.01 * scale * scale / b_sq);
            }
            match reduced_v_step(v, moments, temp, cfg.gamma, h, depth, width, Some(&mut rng)) {
                Ok(next) => v = next.clamp(-REDUCED_V_CAP, REDUCED_V_CAP),
                Err(Error::Diverged { .. }) => {
                    rec.diverged_at = Some(step);
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
            remaining -= h;
        }
        if step % cfg.record_every == 0 {
            rec.times.push(step);
            rec.v_values.push(v);
            rec.charges.push(vec![]);
        }
    }
    rec.final_params = vec![v];
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DiagonalNetwork, TwoLayerTanh};
    use crate::moments::{compute_moments, gaussian_linear_moments, synth_linear_dataset};
    use approx::assert_relative_eq;

    fn two_layer() -> DiagonalNetwork {
        DiagonalNetwork::new(1, 1).unwrap()
    }

    #[test]
    fn temperature_is_eta_over_s() {
        let cfg = StepperConfig::new(1e-2, 4, 10, 0, Mode::Sgd).unwrap();
        assert_eq!(cfg.temperature(), 1e-2 / 4.0);
    }

    #[test]
    fn sgd_on_single_sample_matches_gd() {
        // With all dataset entries identical, any minibatch is the full batch.
        let data = SampleSet::new(vec![1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let net = two_layer();
        let cfg = StepperConfig::new(1e-2, 3, 1, 9, Mode::Sgd).unwrap();
        let mut p_sgd = vec![1.0, 0.5];
        let mut p_gd = p_sgd.clone();
        let mut rng = trajectory_rng(9, 0);
        sgd_step(&net, &mut p_sgd, &data, &cfg, &mut rng, 1).unwrap();
        gd_step(&net, &mut p_gd, &data, &cfg, 1).unwrap();
        for (a, b) in p_sgd.iter().zip(&p_gd) {
            assert_relative_eq!(a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn zero_gradient_point_is_fixed() {
        let data = synth_linear_dataset(1.0, 1.0, 100, 0).unwrap();
        let net = DiagonalNetwork::new(2, 1).unwrap();
        let cfg = StepperConfig::new(1e-2, 1, 1, 0, Mode::Sgd).unwrap();
        let mut p = vec![0.0; 4];
        let mut rng = trajectory_rng(0, 0);
        sgd_step(&net, &mut p, &data, &cfg, &mut rng, 1).unwrap();
        assert!(p.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fixed_seed_reproducible() {
        let data = synth_linear_dataset(1.0, 1.0, 200, 3).unwrap();
        let net = two_layer();
        let mut cfg = StepperConfig::new(1e-3, 1, 500, 11, Mode::Sgd).unwrap();
        cfg.record_every = 50;
        let a = run_trajectory(&net, &[1.2, 0.4], &data, &cfg).unwrap();
        let b = run_trajectory(&net, &[1.2, 0.4], &data, &cfg).unwrap();
        assert_eq!(a.v_values, b.v_values);
        assert_eq!(a.final_params, b.final_params);
    }

    #[test]
    fn langevin_zero_noise_equals_gd() {
        let data = synth_linear_dataset(1.0, 1.0, 100, 1).unwrap();
        let net = two_layer();
        let cfg = StepperConfig::new(1e-3, 1, 1, 0, Mode::LangevinGd).unwrap();
        let mut p1 = vec![1.0, 0.7];
        let mut p2 = p1.clone();
        let mut rng = trajectory_rng(0, 0);
        langevin_gd_step(&net, &mut p1, &data, &cfg, &mut rng, 1).unwrap();
        gd_step(&net, &mut p2, &data, &cfg, 1).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn sde_with_zero_temperature_limit_matches_gd() {
        // Emulate S -> infinity: huge batch size zeroes the noise amplitude.
        let data = synth_linear_dataset(1.0, 1.0, 100, 2).unwrap();
        let net = two_layer();
        let mut cfg = StepperConfig::new(1e-3, 1, 1, 0, Mode::Sde).unwrap();
        cfg.batch_size = usize::MAX / 2;
        let mut p_sde = vec![1.1, 0.6];
        let mut p_gd = p_sde.clone();
        let mut rng = trajectory_rng(0, 0);
        sde_step(&net, &mut p_sde, &data, &cfg, &mut rng, 1).unwrap();
        gd_step(&net, &mut p_gd, &data, &cfg, 1).unwrap();
        for (a, b) in p_sde.iter().zip(&p_gd) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn sde_noise_vanishes_at_interpolation_minimum() {
        // y = 2x data and v = 2: zero residual on every sample.
        let xs: Vec<f64> = (1..=50).map(|i| i as f64 / 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let data = SampleSet::new(xs, ys).unwrap();
        let net = DiagonalNetwork::new(1, 0).unwrap();
        let cfg = StepperConfig::new(1e-3, 1, 1, 5, Mode::Sde).unwrap();
        let mut p = vec![2.0];
        let mut rng = trajectory_rng(5, 0);
        sde_step(&net, &mut p, &data, &cfg, &mut rng, 1).unwrap();
        assert_relative_eq!(p[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn empirical_covariance_matches_analytic_depth0() {
        // C(v) = 4 (alpha1 v^2 - 2 alpha2 v + alpha3) for the depth-0 model.
        let data = synth_linear_dataset(1.0, 1.0, 1_000_000, 7).unwrap();
        let m = compute_moments(&data);
        let net = DiagonalNetwork::new(1, 0).unwrap();
        let v = 0.3;
        let mut buf = [0.0];
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for (x, y) in data.iter() {
            net.grad(&[v], (x, y), 0.0, &mut buf);
            sum += buf[0];
            sum_sq += buf[0] * buf[0];
        }
        let n = data.len() as f64;
        let var = sum_sq / n - (sum / n) * (sum / n);
        let analytic = 4.0 * m.noise_quadratic(v);
        assert_relative_eq!(var, analytic, max_relative = 0.02);
    }

    #[test]
    fn reduced_step_zero_is_absorbing() {
        let m = gaussian_linear_moments(1.0, 1.0);
        let mut rng = trajectory_rng(0, 0);
        let v = reduced_v_step(0.0, &m, 0.1, 0.0, 1e-3, 1, 1, Some(&mut rng)).unwrap();
        assert_eq!(v, 0.0);
        let v = reduced_v_step(0.0, &m, 0.1, 0.0, 1e-3, 3, 2, Some(&mut rng)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn reduced_step_depth1_drift_formula() {
        // D=1, d=1, noise off: v' = v + dt * (-4v(b1 v - b2) + 4vT g(v)).
        let m = gaussian_linear_moments(1.0, 1.0);
        let (v, temp, dt) = (0.7, 0.05, 1e-3);
        let got = reduced_v_step(v, &m, temp, 0.0, dt, 1, 1, None).unwrap();
        let g = m.noise_quadratic(v);
        let expect = v + dt * (-4.0 * v * (m.beta1 * v - m.beta2) + 4.0 * v * temp * g);
        assert_relative_eq!(got, expect, max_relative = 1e-12);
    }

    #[test]
    fn reduced_step_depth1_tracks_full_two_parameter_dynamics() {
        // Balanced two-parameter SDE vs the reduced drift: one noiseless step
        // from u = w differs by O(eta^2) in v.
        let m = gaussian_linear_moments(1.0, 1.0);
        let data = synth_linear_dataset(1.0, 1.0, 50_000, 3).unwrap();
        let md = compute_moments(&data);
        let net = two_layer();
        let eta = 1e-3;
        let v0: f64 = 0.64;
        let r = v0.sqrt();
        let cfg = StepperConfig::new(eta, 1, 1, 0, Mode::Gd).unwrap();
        let mut p = vec![r, r];
        gd_step(&net, &mut p, &data, &cfg, 1).unwrap();
        let v_full = p[0] * p[1];
        // Noiseless reduced step drops the Ito term as well (it is part of
        // the stochastic calculus, not the deterministic flow).
        let v_red = v0 + eta * (-4.0 * v0 * (md.beta1 * v0 - md.beta2));
        assert!(
            (v_full - v_red).abs() < 10.0 * eta * eta,
            "difference {} not O(eta^2)",
            v_full - v_red
        );
        let _ = m;
    }

    #[test]
    fn zero_steps_records_initial_state_only() {
        let data = synth_linear_dataset(1.0, 1.0, 10, 0).unwrap();
        let net = two_layer();
        let cfg = StepperConfig::new(1e-3, 1, 0, 0, Mode::Gd).unwrap();
        let rec = run_trajectory(&net, &[1.0, 1.0], &data, &cfg).unwrap();
        assert_eq!(rec.times, vec![0]);
        assert_eq!(rec.v_values, vec![1.0]);
        assert!(!rec.diverged());
    }

    #[test]
    fn gd_conserves_charge() {
        // u^2 - w^2 drift below 1e-3 over 1e5 GD steps at eta = 1e-3.
        let data = synth_linear_dataset(1.0, 1.0, 1000, 4).unwrap();
        let net = two_layer();
        let mut cfg = StepperConfig::new(1e-3, 1, 100_000, 0, Mode::Gd).unwrap();
        cfg.record_every = 10_000;
        let rec = run_trajectory(&net, &[1.3, 0.5], &data, &cfg).unwrap();
        let q0 = rec.charges[0][0];
        let qf = rec.charges.last().unwrap()[0];
        assert!((qf - q0).abs() < 1e-3, "charge drift {}", qf - q0);
    }

    #[test]
    fn sgd_charge_decays_at_predicted_rate() {
        // |u^2 - w^2| decays like exp(-4 T Delta t / alpha1); check it has
        // dropped below 1e-3 of its initial value by ~3x that time scale.
        let data = synth_linear_dataset(1.0, 1.0, 4000, 8).unwrap();
        let m = compute_moments(&data);
        let eta = 1e-2;
        let temp = eta;
        let rate = 4.0 * temp * m.delta / m.alpha1;
        let t_needed = 3.0 * (1e3f64).ln() / rate;
        let steps = (t_needed / eta).ceil() as usize;
        let mut cfg = StepperConfig::new(eta, 1, steps, 2, Mode::Sgd).unwrap();
        cfg.record_every = steps;
        let net = two_layer();
        let rec = run_trajectory(&net, &[1.3, 0.5], &data, &cfg).unwrap();
        let q0 = rec.charges[0][0].abs();
        let qf = rec.charges.last().unwrap()[0].abs();
        assert!(qf < 1e-3 * q0, "final/initial charge = {}", qf / q0);
    }

    #[test]
    fn charge_sign_never_flips_under_sgd() {
        let data = synth_linear_dataset(1.0, 1.0, 1000, 5).unwrap();
        let net = two_layer();
        let mut cfg = StepperConfig::new(5e-3, 1, 20_000, 6, Mode::Sgd).unwrap();
        cfg.record_every = 100;
        for (init, sign) in [(vec![1.3, 0.5], 1.0), (vec![0.5, 1.3], -1.0)] {
            let rec = run_trajectory(&net, &init, &data, &cfg).unwrap();
            for c in &rec.charges {
                assert!(c[0] * sign >= 0.0, "charge {} flipped sign", c[0]);
            }
        }
    }

    #[test]
    fn tanh_model_runs() {
        let data = synth_linear_dataset(1.0, 1.0, 500, 2).unwrap();
        let model = TwoLayerTanh::Depth1;
        let mut cfg = StepperConfig::new(1e-2, 1, 2000, 3, Mode::Sgd).unwrap();
        cfg.record_every = 500;
        let rec = run_trajectory(&model, &[0.4, 0.3], &data, &cfg).unwrap();
        assert!(!rec.diverged());
        assert_eq!(rec.times.len(), rec.v_values.len());
    }

    #[test]
    fn divergence_is_flagged_not_fatal() {
        let data = synth_linear_dataset(1.0, 1.0, 100, 1).unwrap();
        let net = two_layer();
        // Absurd learning rate to force blow-up.
        let mut cfg = StepperConfig::new(10.0, 1, 200, 0, Mode::Gd).unwrap();
        cfg.record_every = 10;
        let rec = run_trajectory(&net, &[2.0, 2.0], &data, &cfg).unwrap();
        assert!(rec.diverged());
    }

    #[test]
    fn trajectory_csv_header() {
        let data = synth_linear_dataset(1.0, 1.0, 10, 0).unwrap();
        let net = two_layer();
        let cfg = StepperConfig::new(1e-3, 1, 2, 0, Mode::Gd).unwrap();
        let rec = run_trajectory(&net, &[1.0, 0.5], &data, &cfg).unwrap();
        let csv = rec.to_csv();
        assert!(csv.starts_with("step,v,charge_1\n"));
        assert_eq!(csv.lines().count(), 1 + rec.times.len());
    }
}
