//! Statistics for comparing simulated trajectories against closed-form
//! densities: histograms, a tabulated CDF with an atom at zero,
//! Kolmogorov–Smirnov distance, tail-exponent fits, KL estimates, mode
//! estimation, and autocorrelation-based thinning.

use rand::Rng;

use crate::analytic::StationaryDensity;
use crate::{Error, Result};

/// Samples with `|v|` below this are attributed to the atom at zero.
pub const ATOM_TOL: f64 = 1e-8;

/// Fixed-width histogram with Freedman–Diaconis binning.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub n: usize,
}

impl Histogram {
    /// Bin `samples` with the Freedman–Diaconis width (falling back to
    /// Scott-like scaling when the interquartile range degenerates).
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::DegenerateSampleSet(samples.len()));
        }
        let mut sorted: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
        if sorted.len() < 2 {
            return Err(Error::DegenerateSampleSet(sorted.len()));
        }
        sorted.sort_by(|a, b| a.total_cmp(b));
        let n = sorted.len();
        let (lo, hi) = (sorted[0], sorted[n - 1]);
        let iqr = sorted[(3 * n) / 4] - sorted[n / 4];
        let spread = if iqr > 0.0 { iqr } else { (hi - lo).max(f64::MIN_POSITIVE) };
        let width = 2.0 * spread / (n as f64).cbrt();
        let bins = (((hi - lo) / width).ceil() as usize).clamp(1, 10_000);
        Self::with_bins(&sorted, lo, hi, bins)
    }

    /// Histogram with an explicit range and bin count.
    pub fn with_bins(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::Domain(format!("bad histogram range [{lo}, {hi}] / {bins} bins")));
        }
        let mut counts = vec![0usize; bins];
        let mut n = 0;
        let width = (hi - lo) / bins as f64;
        for &v in samples {
            if !v.is_finite() || v < lo || v > hi {
                continue;
            }
            let i = (((v - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
            n += 1;
        }
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        Ok(Self { edges, counts, n })
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    /// Normalized density estimate in bin `i`.
    pub fn density(&self, i: usize) -> f64 {
        self.counts[i] as f64 / (self.n as f64 * self.bin_width())
    }
}

/// Tabulated CDF of a [`StationaryDensity`], including the `z` jump at 0.
#[derive(Debug, Clone)]
pub struct DensityCdf {
    grid: Vec<f64>,
    /// Continuous-part cumulative mass up to each grid point.
    cum: Vec<f64>,
    z: f64,
    lower_bound: f64,
}

impl DensityCdf {
    /// Tabulate the CDF on `points` (sorted strictly increasing) which must
    /// cover the range where it will be queried.
    pub fn build(density: &StationaryDensity, points: &[f64]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Domain("CDF grid needs at least 2 points".into()));
        }
        let lower = if density.domain.0.is_finite() {
            density.domain.0
        } else {
            f64::NEG_INFINITY
        };
        let mut cum = Vec::with_capacity(points.len());
        let mut acc = density.mass_between(lower, points[0])?;
        cum.push(acc);
        for w in points.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Domain("CDF grid must be strictly increasing".into()));
            }
            acc += density.mass_between(w[0], w[1])?;
            cum.push(acc);
        }
        Ok(Self {
            grid: points.to_vec(),
            cum,
            z: density.z,
            lower_bound: points[0],
        })
    }

    /// CDF value `P(V <= v)`, linearly interpolated between grid points.
    pub fn cdf(&self, v: f64) -> f64 {
        let atom = if v >= 0.0 { self.z } else { 0.0 };
        if v <= self.lower_bound {
            return if v < self.lower_bound { atom } else { self.cum[0] + atom };
        }
        if v >= *self.grid.last().expect("grid nonempty") {
            return self.cum.last().expect("grid nonempty") + atom;
        }
        let i = self.grid.partition_point(|&g| g <= v) - 1;
        let (g0, g1) = (self.grid[i], self.grid[i + 1]);
        let t = (v - g0) / (g1 - g0);
        self.cum[i] + t * (self.cum[i + 1] - self.cum[i]) + atom
    }

    /// Inverse CDF of the continuous part by bisection on the table.
    pub fn quantile(&self, p: f64) -> f64 {
        let total = *self.cum.last().expect("grid nonempty");
        let target = p.clamp(0.0, 1.0) * total;
        let i = self.cum.partition_point(|&c| c < target);
        if i == 0 {
            return self.grid[0];
        }
        if i >= self.grid.len() {
            return *self.grid.last().expect("grid nonempty");
        }
        let (c0, c1) = (self.cum[i - 1], self.cum[i]);
        let t = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
        self.grid[i - 1] + t * (self.grid[i] - self.grid[i - 1])
    }

    /// Draw from the continuous part via inverse-CDF sampling.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

/// Two-sided Kolmogorov–Smirnov distance between empirical samples and a
/// stationary density (atom at zero included). Samples that fall where the
/// density has no support simply push the statistic toward 1.
pub fn ks_distance(samples: &[f64], density: &StationaryDensity) -> Result<f64> {
    // KS resolution scales as n^{-1/2}; beyond this many points the extra
    // quadrature work buys nothing at the tolerances in use.
    const MAX_POINTS: usize = 200_000;
    if samples.len() < 2 {
        return Err(Error::DegenerateSampleSet(samples.len()));
    }
    // Map near-zero samples onto the atom, deterministically subsample
    // oversized inputs, and sort.
    let stride = samples.len().div_ceil(MAX_POINTS);
    let mut sorted: Vec<f64> = samples
        .iter()
        .step_by(stride)
        .map(|&v| if v.abs() <= ATOM_TOL { 0.0 } else { v })
        .collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let z_eff = if density.is_delta() { 1.0 } else { density.z };
    let lower = if density.domain.0.is_finite() {
        density.domain.0
    } else {
        f64::NEG_INFINITY
    };
    // Walk the sorted samples accumulating the exact continuous CDF by
    // quadrature over each gap; compare at both sides of every jump. Tied
    // samples (the atom in particular) are grouped so coincident jumps of
    // the two CDFs cancel instead of being double counted.
    let mut d: f64 = 0.0;
    let mut cont_cum = 0.0;
    let mut prev = lower;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        if !density.is_delta() {
            // Clamp into the support so stray out-of-domain samples (e.g.
            // discretization overshoot past a reflecting origin) contribute
            // zero continuous mass instead of a quadrature error.
            let a = prev.clamp(density.domain.0, density.domain.1);
            let b = v.clamp(density.domain.0, density.domain.1);
            if b > a {
                cont_cum += density.mass_between(a, b)?;
            }
        }
        prev = v;
        let f = cont_cum + if v >= 0.0 { z_eff } else { 0.0 };
        // Left limit: only the atom gives the theoretical CDF a jump.
        let f_left = if v == 0.0 { f - z_eff } else { f };
        d = d.max((f - j as f64 / n).abs());
        d = d.max((f_left - i as f64 / n).abs());
        i = j;
    }
    Ok(d.min(1.0))
}

/// Least-squares line fit; returns `(slope, intercept)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "linear_fit: {} x vs {} y",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("linear_fit: degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Standard error of the slope of a least-squares line fit.
fn slope_stderr(xs: &[f64], ys: &[f64], slope: f64, intercept: f64) -> f64 {
    let n = xs.len() as f64;
    if n < 3.0 {
        return f64::INFINITY;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    (ss_res / ((n - 2.0) * sxx)).sqrt()
}

/// Power-law exponent `a` of `p(v) ~ v^-a` fitted on the upper tail of
/// positive samples: regression of the empirical log-survival function over
/// the `[0.95, 0.999]` quantile window, needing at least 200 tail points.
/// Returns `(a, stderr)`.
pub fn fit_tail_exponent(samples: &[f64]) -> Result<(f64, f64)> {
    const MIN_POINTS: usize = 200;
    let mut sorted: Vec<f64> = samples.iter().copied().filter(|v| *v > 0.0).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let lo = (0.95 * n as f64) as usize;
    let hi = ((0.999 * n as f64) as usize).min(n.saturating_sub(1));
    if hi <= lo || hi - lo < MIN_POINTS {
        return Err(Error::InsufficientTail(hi.saturating_sub(lo), MIN_POINTS));
    }
    let mut xs = Vec::with_capacity(hi - lo);
    let mut ys = Vec::with_capacity(hi - lo);
    for i in lo..hi {
        let survival = 1.0 - (i as f64 + 0.5) / n as f64;
        xs.push(sorted[i].ln());
        ys.push(survival.ln());
    }
    let (slope, intercept) = linear_fit(&xs, &ys)?;
    // Survival ~ v^{-(a-1)} for a density tail v^{-a}.
    Ok((1.0 - slope, slope_stderr(&xs, &ys, slope, intercept)))
}

/// Power-law exponent from an analytic `(v, log p(v))` grid: `-slope` of
/// `log p` against `ln v`. Returns `(a, stderr)`.
pub fn fit_tail_exponent_grid(vs: &[f64], log_ps: &[f64]) -> Result<(f64, f64)> {
    let xs: Vec<f64> = vs.iter().map(|v| v.ln()).collect();
    let (slope, intercept) = linear_fit(&xs, log_ps)?;
    Ok((-slope, slope_stderr(&xs, log_ps, slope, intercept)))
}

/// Probability mass a reference distribution assigns to a bin, used by the
/// KL estimator. `None` marks an improper reference (no finite total mass).
pub trait BinDensity {
    fn bin_mass(&self, a: f64, b: f64) -> Option<f64>;
}

impl BinDensity for StationaryDensity {
    fn bin_mass(&self, a: f64, b: f64) -> Option<f64> {
        let mut mass = self.mass_between(a, b).ok()?;
        if a < 0.0 && b >= 0.0 {
            mass += self.z;
        }
        Some(mass)
    }
}

/// Improper uniform reference over an unbounded direction (e.g. the
/// conserved-charge coordinate under a degenerate Gibbs measure): every
/// finite bin carries zero relative mass.
#[derive(Debug, Clone, Copy)]
pub struct ImproperUniform;

impl BinDensity for ImproperUniform {
    fn bin_mass(&self, _a: f64, _b: f64) -> Option<f64> {
        None
    }
}

/// Result of a KL estimate; `Infinite` flags an improper or mismatched
/// reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlResult {
    Finite(f64),
    Infinite,
}

/// Histogram estimate of `KL(empirical || reference)` in nats.
pub fn kl_estimate<Q: BinDensity + ?Sized>(samples: &[f64], reference: &Q) -> Result<KlResult> {
    let hist = Histogram::fit(samples)?;
    let mut kl = 0.0;
    for i in 0..hist.counts.len() {
        if hist.counts[i] == 0 {
            continue;
        }
        let p = hist.counts[i] as f64 / hist.n as f64;
        match reference.bin_mass(hist.edges[i], hist.edges[i + 1]) {
            Some(q) if q > 0.0 => kl += p * (p / q).ln(),
            _ => return Ok(KlResult::Infinite),
        }
    }
    Ok(KlResult::Finite(kl))
}

/// Histogram-based estimate of the nontrivial mode. The stationary
/// densities often pile mass against the origin, so the estimator skips the
/// initial monotone spike: it scans for the first local minimum of the bin
/// counts and returns the highest bin after it (or the global argmax when
/// the histogram rises from the start).
pub fn empirical_mode(samples: &[f64]) -> Result<f64> {
    let hist = Histogram::fit(samples)?;
    let counts = &hist.counts;
    let mut start = 0;
    for i in 1..counts.len() {
        if counts[i] > counts[i - 1] {
            start = i;
            break;
        }
    }
    let best = (start..counts.len())
        .max_by_key(|&i| counts[i])
        .ok_or_else(|| Error::DegenerateSampleSet(samples.len()))?;
    Ok(hist.center(best))
}

/// Lag-`k` autocorrelation of a series.
pub fn autocorrelation(series: &[f64], lag: usize) -> f64 {
    let n = series.len();
    if lag >= n || n < 2 {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|v| (v - mean) * (v - mean)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = (0..n - lag)
        .map(|i| (series[i] - mean) * (series[i + lag] - mean))
        .sum();
    cov / var
}

/// Approximately independent draws from a recorded trajectory: drop the
/// first 20% as burn-in, then double the thinning stride until the lag-1
/// autocorrelation of the thinned series drops below 0.5 (or the series
/// gets too short to thin further).
pub fn stationary_samples(series: &[f64]) -> Vec<f64> {
    let burn = series.len() / 5;
    let tail = &series[burn..];
    let mut stride = 1;
    loop {
        let thinned: Vec<f64> = tail.iter().step_by(stride).copied().collect();
        if thinned.len() < 64 || autocorrelation(&thinned, 1).abs() < 0.5 {
            return thinned;
        }
        stride *= 2;
    }
}
