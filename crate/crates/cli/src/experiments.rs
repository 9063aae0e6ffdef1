//! Experiment drivers: each maps a declarative config to simulation and
//! quadrature calls in the core library and writes CSV/JSON artifacts.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use sgdlab_core::analytic::{
    critical_points, mle_v, regime_classify, variance_curve, DensityCase, MaxKind, Phase,
    StationaryDensity,
};
use sgdlab_core::balance::{random_relu_net, synth_vector_dataset, train_relu_sgd};
use sgdlab_core::dynamics::{
    run_reduced_trajectory, run_trajectory_indexed, trajectory_rng, Mode, StepperConfig,
    TrajectoryRecord,
};
use sgdlab_core::models::{DiagonalNetwork, ScalarModel, TwoLayerTanh};
use sgdlab_core::moments::{
    compute_moments, gaussian_linear_moments, synth_delta_zero_dataset, synth_linear_dataset,
    MomentSummary, SampleSet,
};
use sgdlab_core::stats::{
    fit_tail_exponent, kl_estimate, ks_distance, stationary_samples, Histogram, ImproperUniform,
    KlResult,
};

use crate::artifact::{fmt_f64, ArtifactSink, SCHEMA_VERSION};
use crate::config::{DatasetKind, DatasetSpec, ExperimentConfig, ExperimentKind, StepperSpec};
use crate::error::CliError;

use rand::Rng;

/// Run one experiment and write its artifacts plus the manifest.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    config_bytes: &[u8],
    out: &Path,
    workers: usize,
) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
    crate::config::validate_for_run(cfg)?;
    let mut sink = ArtifactSink::new(out)?;
    pool.install(|| -> Result<(), CliError> {
        match cfg.experiment {
            ExperimentKind::BalanceLinear => balance_linear(cfg, &mut sink),
            ExperimentKind::BalanceRelu => balance_relu(cfg, &mut sink),
            ExperimentKind::NoetherContrast => noether_contrast(cfg, &mut sink),
            ExperimentKind::StationaryDepth0 => stationary(cfg, &mut sink, 0),
            ExperimentKind::StationaryDepth1 => stationary(cfg, &mut sink, 1),
            ExperimentKind::StationaryGeneralD => {
                let depth = cfg.density.as_ref().map_or(2, |d| d.depth);
                stationary(cfg, &mut sink, depth)
            }
            ExperimentKind::SignCoherenceTanh => sign_coherence(cfg, &mut sink),
            ExperimentKind::RegimesGrid => regimes_grid(cfg, &mut sink),
            ExperimentKind::FluctuationInversion => fluctuation_inversion(cfg, &mut sink),
            ExperimentKind::BayesCompare => bayes_compare(cfg, &mut sink),
        }
    })?;
    sink.finish(&cfg.experiment.to_string(), config_bytes, cfg.seed)
}

fn make_dataset(spec: &DatasetSpec) -> Result<SampleSet, CliError> {
    let set = match spec.kind {
        DatasetKind::GaussianLinear => synth_linear_dataset(spec.k, spec.sigma, spec.n, spec.seed)?,
        DatasetKind::DeltaZero => synth_delta_zero_dataset(spec.k, spec.c, spec.n, spec.seed)?,
    };
    Ok(set)
}

fn moments_of(spec: &DatasetSpec) -> Result<MomentSummary, CliError> {
    match spec.kind {
        DatasetKind::GaussianLinear => Ok(gaussian_linear_moments(spec.k, spec.sigma)),
        DatasetKind::DeltaZero => {
            let set = make_dataset(spec)?;
            Ok(compute_moments(&set))
        }
    }
}

fn stepper_config(
    spec: &StepperSpec,
    seed: u64,
    mode: Option<Mode>,
) -> Result<StepperConfig, CliError> {
    let mut cfg = StepperConfig::new(
        spec.eta,
        spec.batch_size,
        spec.steps,
        seed,
        mode.unwrap_or_else(|| spec.mode.into()),
    )?;
    cfg.gamma = spec.gamma;
    cfg.record_every = spec.record_every;
    cfg.noise_scale = spec.noise_scale;
    cfg.substeps = spec.substeps;
    Ok(cfg)
}

fn require_stepper(cfg: &ExperimentConfig) -> Result<&StepperSpec, CliError> {
    cfg.stepper
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [stepper] section".into()))
}

/// File-name-safe label for a temperature value.
fn t_label(t: f64) -> String {
    format!("{t:?}").replace('.', "p").replace('-', "m")
}

/// Seed-averaged imbalance decay of the single-subnet linear model against
/// the predicted instantaneous rate.
fn balance_linear(cfg: &ExperimentConfig, sink: &mut ArtifactSink) -> Result<(), CliError> {
    let stepper = require_stepper(cfg)?;
    let data = make_dataset(&cfg.dataset)?;
    let m = moments_of(&cfg.dataset)?;
    let net = DiagonalNetwork::new(1, 1)?;
    let init = [1.3, 0.5];
    let run = stepper_config(stepper, cfg.seed, Some(Mode::Sgd))?;
    let temp = run.temperature();
    let records: Vec<TrajectoryRecord> = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| run_trajectory_indexed(&net, &init, &data, &run, s))
        .collect::<Result<_, _>>()?;
    let n_rec = records[0].times.len();
    let mut csv = String::from("step,mean_abs_charge,mean_v,predicted_rate\n");
    for i in 0..n_rec {
        let q = records.iter().map(|r| r.charges[i][0].abs()).sum::<f64>() / cfg.seeds as f64;
        let v = records.iter().map(|r| r.v_values[i]).sum::<f64>() / cfg.seeds as f64;
        let rate = 4.0 * temp * m.noise_quadratic(v);
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            records[0].times[i],
            fmt_f64(q),
            fmt_f64(v),
            fmt_f64(rate)
        );
    }
    sink.write("balance.csv", &csv)
}

/// Two-layer ReLU balance trace under single-sample SGD.
fn balance_relu(cfg: &ExperimentConfig, sink: &mut ArtifactSink) -> Result<(), CliError> {
    let stepper = require_stepper(cfg)?;
    let data = synth_vector_dataset(3, cfg.dataset.sigma, cfg.dataset.n, cfg.dataset.seed);
    let mut net = random_relu_net(20, 3, 3, 0.7, cfg.seed);
    let trace = train_relu_sgd(
        &mut net,
        &data,
        stepper.eta,
        stepper.steps,
        stepper.record_every.max(1),
        cfg.seed,
    )?;
    let mut csv = String::from("step,lhs,rhs,residual,charge,norm_ratio\n");
    for p in &trace {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            p.step,
            fmt_f64(p.lhs),
            fmt_f64(p.rhs),
            fmt_f64(p.residual),
            fmt_f64(p.charge),
            fmt_f64(p.norm_ratio)
        );
    }
    sink.write("relu_balance.csv", &csv)
}

/// GD / SGD / Langevin three-way contrast on the conserved charge.
fn noether_contrast(cfg: &ExperimentConfig, sink: &mut ArtifactSink) -> Result<(), CliError> {
    let stepper = require_stepper(cfg)?;
    let data = make_dataset(&cfg.dataset)?;
    let net = DiagonalNetwork::new(1, 1)?;
    let init = [1.3, 0.5];

    for (mode, name) in [(Mode::Gd, "gd_charge.csv"), (Mode::Sgd, "sgd_charge.csv")] {
        let run = stepper_config(stepper, cfg.seed, Some(mode))?;
        let rec = run_trajectory_indexed(&net, &init, &data, &run, 0)?;
        let mut csv = String::from("step,charge\n");
        for (t, q) in rec.times.iter().zip(&rec.charges) {
            let _ = writeln!(csv, "{t},{}", fmt_f64(q[0]));
        }
        sink.write(name, &csv)?;
    }

    let mut run = stepper_config(stepper, cfg.seed, Some(Mode::LangevinGd))?;
    if run.noise_scale == 0.0 {
        run.noise_scale = 1.0;
    }
    let records: Vec<TrajectoryRecord> = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| run_trajectory_indexed(&net, &init, &data, &run, s))
        .collect::<Result<_, _>>()?;
    let mut csv = String::from("step,charge_variance\n");
    for i in 0..records[0].times.len() {
        let qs: Vec<f64> = records.iter().map(|r| r.charges[i][0]).collect();
        let mean = qs.iter().sum::<f64>() / qs.len() as f64;
        let var = qs.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / qs.len() as f64;
        let _ = writeln!(csv, "{},{}", records[0].times[i], fmt_f64(var));
    }
    sink.write("langevin_charge_variance.csv", &csv)
}

#[derive(Serialize)]
struct StationaryStats {
    schema_version: u32,
    temperature: f64,
    depth: usize,
    width: usize,
    n_effective: usize,
    z_hat: f64,
    ks: Option<f64>,
}

/// Reduced-SDE stationary histograms against the closed-form density, one
/// pair of artifacts per temperature.
fn stationary(cfg: &ExperimentConfig, sink: &mut ArtifactSink, depth: usize) -> Result<(), CliError> {
    let stepper = require_stepper(cfg)?;
    let m = moments_of(&cfg.dataset)?;
    let width = cfg.density.as_ref().map_or(1, |d| d.width);
    let gamma = stepper.gamma;
    let temps = if cfg.temperatures.is_empty() {
        vec![0.05, 0.5]
    } else {
        cfg.temperatures.clone()
    };
    // `stepper.eta` is the target inner integration step; each temperature
    // records every `T` of model time with enough substeps to stay at or
    // below that target.
    let runs: Vec<(f64, TrajectoryRecord)> = temps
        .par_iter()
        .map(|&t| -> Result<(f64, TrajectoryRecord), CliError> {
            let mut run = StepperConfig::new(t, 1, stepper.steps, cfg.seed, Mode::ReducedSde)?;
            run.gamma = gamma;
            run.substeps = ((t / stepper.eta).ceil() as usize).max(1);
            let rec = run_reduced_trajectory(cfg.v0, &m, &run, depth, width, 0)?;
            Ok((t, rec))
        })
        .collect::<Result<_, _>>()?;

    for (t, rec) in &runs {
        let label = t_label(*t);
        let samples = stationary_samples(&rec.v_values);
        let z_hat = if depth == 0 {
            0.0
        } else {
            samples.iter().filter(|v| v.abs() <= 1e-8).count() as f64 / samples.len() as f64
        };
        let hist = Histogram::fit(&samples)?;
        let mut csv = String::from("bin_lo,bin_hi,count,density\n");
        for i in 0..hist.counts.len() {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                fmt_f64(hist.edges[i]),
                fmt_f64(hist.edges[i + 1]),
                hist.counts[i],
                fmt_f64(hist.density(i))
            );
        }
        sink.write(&format!("hist_T{label}.csv"), &csv)?;

        let case = match depth {
            0 => DensityCase::Depth0,
            1 => DensityCase::Depth1,
            d => DensityCase::GeneralD { depth: d, width },
        };
        let density = StationaryDensity::new(case, m, *t, gamma, z_hat)?;
        let (lo, hi, points) = cfg
            .density
            .as_ref()
            .map_or((-2.0, 4.0, 500), |d| d.grid);
        let (lo, hi) = if depth == 0 {
            (lo, hi)
        } else {
            (lo.max(1e-3), hi.max(1.0))
        };
        let mut csv = String::from("v,pdf\n");
        for i in 0..points {
            let v = lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64;
            let _ = writeln!(csv, "{},{}", fmt_f64(v), fmt_f64(density.pdf(v)));
        }
        sink.write(&format!("analytic_T{label}.csv"), &csv)?;

        let ks = if density.is_delta() {
            None
        } else {
            Some(ks_distance(&samples, &density)?)
        };
        sink.write_json(
            &format!("stats_T{label}.json"),
            &StationaryStats {
                schema_version: SCHEMA_VERSION,
                temperature: *t,
                depth,
                width,
                n_effective: samples.len(),
                z_hat,
                ks,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SignSummary {
    schema_version: u32,
    threshold: f64,
    depth1_wrong_sign: usize,
    depth0_wrong_sign: usize,
    seeds: u64,
}

/// Mixed-sign tanh ensembles: the factorized model keeps its output on the
/// target sign, the depth-0 model need not.
fn sign_coherence(cfg: &ExperimentConfig, sink: &mut ArtifactSink) -> Result<(), CliError> {
    let stepper = require_stepper(cfg)?;
    let data = make_dataset(&cfg.dataset)?;
    let threshold = -0.1;
    let mut csv = String::from("model,seed,final_v\n");
    let mut wrong = [0usize; 2];
    for (idx, model) in [TwoLayerTanh::Depth1, TwoLayerTanh::Depth0].iter().enumerate() {
        let run = stepper_config(stepper, cfg.seed.wrapping_add(idx as u64), Some(Mode::Sgd))?;
        let mut init_rng = trajectory_rng(cfg.seed.wrapping_add(100 + idx as u64), 0);
        let inits: Vec<Vec<f64>> = (0..cfg.seeds)
            .map(|_| {
                (0..model.dim())
                    .map(|_| {
                        let mag = 0.2 + 0.8 * init_rng.random::<f64>();
                        if init_rng.random::<f64>() < 0.5 {
                            mag
                        } else {
                            -mag
                        }
                    })
                    .collect()
            })
            .collect();
        let finals: Vec<f64> = inits
            .par_iter()
            .enumerate()
            .map(|(s, init)| -> Result<f64, CliError> {
                let rec = run_trajectory_indexed(model, init, &data, &run, s as u64)?;
                Ok(model.output(&rec.final_params))
            })
            .collect::<Result<_, _>>()?;
        let name = if idx == 0 { "depth1" } else { "depth0" };
        for (s, v) in finals.iter().enumerate() {
            let _ = writeln!(csv, "{name},{s},{}", fmt_f64(*v));
            if *v < threshold {
                wrong[idx] += 1;
            }
        }
    }
    sink.write("final_outputs.csv", &csv)?;
    sink.write_json(
        "sign_summary.json",
        &SignSummary {
            schema_version: SCHEMA_VERSION,
            threshold,
            depth1_wrong_sign: wrong[0],
            depth0_wrong_sign: wrong[1],
            seeds: cfg.seeds,
        },
    )
}

/// Phase/maximizer classification over a (sigma, T) grid, with the critical
/// temperature curves as separate columns.
fn regimes_grid(cfg: &ExperimentConfig, sink: &mut ArtifactSink) -> Result<(), CliError> {
    let temps = if cfg.temperatures.is_empty() {
        (1..=12).map(|i| 0.05 * i as f64).collect()
    } else {
        cfg.temperatures.clone()
    };
    let gamma = cfg.stepper.as_ref().map_or(0.0, |s| s.gamma);
    let k = cfg.dataset.k;
    let rows: Vec<String> = cfg
        .sigmas
        .par_iter()
        .map(|&sigma| {
            let m = gaussian_linear_moments(k, sigma);
            let cp = critical_points(&m, (0.0, f64::INFINITY), gamma);
            let mut out = String::new();
            for &t in &temps {
                let label = regime_classify(&m, t, gamma);
                let phase = match label.phase {
                    Phase::I => "I",
                    Phase::II => "II",
                    Phase::III => "III",
                };
                let kind = match label.max_kind {
                    MaxKind::A => "a",
                    MaxKind::B => "b",
                };
                let t_star = cp.t_star.map_or(String::new(), fmt_f64);
                let _ = writeln!(
                    out,
                    "{},{},{phase},{kind},{},{},{t_star}",
                    fmt_f64(sigma),
                    fmt_f64(t),
                    fmt_f64(cp.t_c),
                    fmt_f64(cp.t_c_over_3)
                );
            }
            out
        })
        .collect();
    let mut csv = String::from("sigma,temperature,phase,max_kind,t_c,t_c_over_3,t_star\n");
    for row in rows {
        csv.push_str(&row);
    }
    sink.write("regimes.csv", &csv)
}

/// Mean and variance of the depth-1 stationary density along a temperature
/// grid inside the inversion window.
fn fluctuation_inversion(cfg: &ExperimentConfig, sink: &mut ArtifactSink) -> Result<(), CliError> {
    let m = moments_of(&cfg.dataset)?;
    let gamma = cfg.stepper.as_ref().map_or(0.0, |s| s.gamma);
    let (depth, width) = cfg.density.as_ref().map_or((1, 1), |d| (d.depth, d.width));
    let t_c = (m.beta2 - gamma) / m.alpha3;
    let temps = if cfg.temperatures.is_empty() {
        (0..8).map(|i| t_c * (0.35 + 0.55 * i as f64 / 7.0)).collect()
    } else {
        cfg.temperatures.clone()
    };
    let curve = variance_curve(&m, gamma, depth, width, &temps)?;
    let mut csv = String::from("temperature,mean_v,var_v,is_delta\n");
    for p in &curve {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            fmt_f64(p.temp),
            fmt_f64(p.mean_v),
            fmt_f64(p.var_v),
            p.is_delta
        );
    }
    sink.write("variance.csv", &csv)
}

#[derive(Serialize)]
struct BayesSummary {
    schema_version: u32,
    charge_kl_infinite: bool,
    self_kl: Option<f64>,
    temperature: f64,
}

/// Support mismatch against the Gibbs reference: SGD charge samples give the
/// KL infinity marker while the depth-0 closed form is self-consistent.
fn bayes_compare(cfg: &ExperimentConfig, sink: &mut ArtifactSink) -> Result<(), CliError> {
    let stepper = require_stepper(cfg)?;
    let data = make_dataset(&cfg.dataset)?;
    let m = moments_of(&cfg.dataset)?;
    let net = DiagonalNetwork::new(1, 1)?;
    let run = stepper_config(stepper, cfg.seed, Some(Mode::Sgd))?;
    let temp = run.temperature();
    let rec = run_trajectory_indexed(&net, &[1.3, 0.5], &data, &run, 0)?;
    let charges: Vec<f64> = rec.charges[rec.charges.len() / 2..]
        .iter()
        .map(|q| q[0])
        .collect();
    let hist = Histogram::fit(&charges)?;
    let mut csv = String::from("bin_lo,bin_hi,count\n");
    for i in 0..hist.counts.len() {
        let _ = writeln!(
            csv,
            "{},{},{}",
            fmt_f64(hist.edges[i]),
            fmt_f64(hist.edges[i + 1]),
            hist.counts[i]
        );
    }
    sink.write("charge_hist.csv", &csv)?;
    let charge_kl = kl_estimate(&charges, &ImproperUniform)?;

    let mut reduced = StepperConfig::new(temp, 1, stepper.steps, cfg.seed, Mode::ReducedSde)?;
    reduced.substeps = ((temp / stepper.eta).ceil() as usize).max(1);
    let rec = run_reduced_trajectory(cfg.v0, &m, &reduced, 0, 1, 0)?;
    let samples = stationary_samples(&rec.v_values);
    let density = StationaryDensity::new(DensityCase::Depth0, m, temp, 0.0, 0.0)?;
    let self_kl = match kl_estimate(&samples, &density)? {
        KlResult::Finite(v) => Some(v),
        KlResult::Infinite => None,
    };
    sink.write_json(
        "bayes_summary.json",
        &BayesSummary {
            schema_version: SCHEMA_VERSION,
            charge_kl_infinite: charge_kl == KlResult::Infinite,
            self_kl,
            temperature: temp,
        },
    )
}

#[derive(Serialize)]
struct CompareReport {
    schema_version: u32,
    ks: f64,
    kl: Option<f64>,
    kl_infinite: bool,
    tail_exponent: Option<f64>,
    tail_stderr: Option<f64>,
    n_effective: usize,
}

/// The `compare` subcommand: trajectory CSV against a density spec.
pub fn compare_trajectory(
    cfg: &ExperimentConfig,
    trajectory_csv: &str,
    out: &Path,
    config_bytes: &[u8],
) -> Result<(), CliError> {
    let density_spec = cfg
        .density
        .as_ref()
        .ok_or_else(|| CliError::Config("compare requires a [density] section".into()))?;
    let m = moments_of(&cfg.dataset)?;
    let density = StationaryDensity::new(
        density_spec.to_case(),
        m,
        density_spec.temperature,
        density_spec.gamma,
        density_spec.z,
    )?;
    let series = read_v_column(trajectory_csv)?;
    let samples = stationary_samples(&series);
    let ks = ks_distance(&samples, &density)?;
    let (kl, kl_infinite) = match kl_estimate(&samples, &density)? {
        KlResult::Finite(v) => (Some(v), false),
        KlResult::Infinite => (None, true),
    };
    let (tail_exponent, tail_stderr) = match fit_tail_exponent(&samples) {
        Ok((a, se)) => (Some(a), Some(se)),
        Err(_) => (None, None),
    };
    let mut sink = ArtifactSink::new(out)?;
    sink.write_json(
        "compare.json",
        &CompareReport {
            schema_version: SCHEMA_VERSION,
            ks,
            kl,
            kl_infinite,
            tail_exponent,
            tail_stderr,
            n_effective: samples.len(),
        },
    )?;
    sink.finish("compare", config_bytes, cfg.seed)
}

/// Parse the `v` column of a trajectory CSV (header `step,v,...`).
fn read_v_column(text: &str) -> Result<Vec<f64>, CliError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Config("empty trajectory CSV".into()))?;
    let v_idx = header
        .split(',')
        .position(|c| c.trim() == "v")
        .ok_or_else(|| CliError::Config("trajectory CSV has no `v` column".into()))?;
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cell = line.split(',').nth(v_idx).ok_or_else(|| {
            CliError::Config(format!("trajectory CSV line {}: missing v column", lineno + 2))
        })?;
        let v: f64 = cell.trim().parse().map_err(|e| {
            CliError::Config(format!("trajectory CSV line {}: {e}", lineno + 2))
        })?;
        out.push(v);
    }
    Ok(out)
}

#[derive(Serialize)]
struct PdfMeta {
    schema_version: u32,
    temperature: f64,
    t_c: f64,
    t_c_over_3: f64,
    t_c_modified: f64,
    t_star: Option<f64>,
    phase: String,
    max_kind: String,
    v_star: Option<f64>,
    z: f64,
    is_delta: bool,
    domain: (f64, f64),
}

/// The `analytic-pdf` subcommand: tabulate a closed-form density with its
/// critical-temperature sidecar.
pub fn analytic_pdf(
    cfg: &ExperimentConfig,
    out: &Path,
    config_bytes: &[u8],
) -> Result<(), CliError> {
    let spec = cfg
        .density
        .as_ref()
        .ok_or_else(|| CliError::Config("analytic-pdf requires a [density] section".into()))?;
    let m = moments_of(&cfg.dataset)?;
    let density = StationaryDensity::new(spec.to_case(), m, spec.temperature, spec.gamma, spec.z)?;
    let (lo, hi, points) = spec.grid;
    let mut csv = String::from("v,pdf\n");
    for i in 0..points {
        let v = lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64;
        let _ = writeln!(csv, "{},{}", fmt_f64(v), fmt_f64(density.pdf(v)));
    }
    let cp = critical_points(&m, (0.0, f64::INFINITY), spec.gamma);
    let label = regime_classify(&m, spec.temperature, spec.gamma);
    let meta = PdfMeta {
        schema_version: SCHEMA_VERSION,
        temperature: spec.temperature,
        t_c: cp.t_c,
        t_c_over_3: cp.t_c_over_3,
        t_c_modified: cp.t_c_modified,
        t_star: cp.t_star,
        phase: format!("{:?}", label.phase),
        max_kind: format!("{:?}", label.max_kind),
        v_star: mle_v(&m, spec.temperature, spec.gamma),
        z: spec.z,
        is_delta: density.is_delta(),
        domain: density.domain,
    };
    let mut sink = ArtifactSink::new(out)?;
    sink.write("pdf.csv", &csv)?;
    sink.write_json("pdf_meta.json", &meta)?;
    sink.finish("analytic-pdf", config_bytes, cfg.seed)
}
