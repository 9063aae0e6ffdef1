//! Scalar datasets and the moment parameters that drive every closed-form
//! expression in this crate.
//!
//! The landscape of the linear models depends on the data only through
//! `beta1 = E[x^2]` and `beta2 = E[xy]`, while the gradient noise depends on
//! `alpha1 = Var[x^2]`, `alpha2 = cov(x^2, xy)` and `alpha3 = Var[xy]`.
//! `delta = alpha1*alpha3 - alpha2^2` is the minimal noise level on the
//! landscape; `delta = 0` routes to the degenerate analytic branches.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative tolerance below which a slightly negative `delta` (roundoff on
/// exactly degenerate data) is clipped to zero.
pub const DELTA_CLIP_REL: f64 = 1e-12;

/// A scalar training set of `(x, y)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl SampleSet {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch(format!(
                "xs has {} entries, ys has {}",
                xs.len(),
                ys.len()
            )));
        }
        if xs.len() < 2 {
            return Err(Error::DegenerateSampleSet(xs.len()));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("sample set contains non-finite values".into()));
        }
        Ok(Self { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn pair(&self, i: usize) -> (f64, f64) {
        (self.xs[i], self.ys[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    /// Two-column CSV with an `x,y` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for (x, y) in self.iter() {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with('x')) {
                continue;
            }
            let mut fields = line.split(',');
            let (x, y) = match (fields.next(), fields.next()) {
                (Some(x), Some(y)) => (x, y),
                _ => {
                    return Err(Error::Domain(format!(
                        "line {}: expected two comma-separated fields",
                        lineno + 1
                    )))
                }
            };
            let parse = |s: &str, what: &str| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::Domain(format!("line {}: cannot parse {what} {s:?}", lineno + 1))
                })
            };
            xs.push(parse(x, "x")?);
            ys.push(parse(y, "y")?);
        }
        Self::new(xs, ys)
    }
}

/// The five data moments plus `delta`, computed with population (`1/n`)
/// normalization: the training set is treated as a fixed distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    /// Var[x^2]
    pub alpha1: f64,
    /// E[x^3 y] - E[x^2] E[xy] = cov(x^2, xy)
    pub alpha2: f64,
    /// Var[xy]
    pub alpha3: f64,
    /// E[x^2]
    pub beta1: f64,
    /// E[xy]
    pub beta2: f64,
    /// alpha1*alpha3 - alpha2^2, clipped to 0 within roundoff of zero
    pub delta: f64,
}

impl MomentSummary {
    /// Construct directly from the five raw moments, recomputing `delta`.
    pub fn from_parts(alpha1: f64, alpha2: f64, alpha3: f64, beta1: f64, beta2: f64) -> Self {
        let raw = alpha1 * alpha3 - alpha2 * alpha2;
        let delta = if raw.abs() <= DELTA_CLIP_REL * alpha1 * alpha3 || raw.is_nan() {
            0.0
        } else {
            raw
        };
        Self { alpha1, alpha2, alpha3, beta1, beta2, delta }
    }

    /// The gradient variance of the depth-0 model at output `v`:
    /// `C(v) = 4 (alpha1 v^2 - 2 alpha2 v + alpha3)`.
    pub fn noise_quadratic(&self, v: f64) -> f64 {
        self.alpha1 * v * v - 2.0 * self.alpha2 * v + self.alpha3
    }

    /// Same quadratic on the negative branch, evaluated at `|v|` with the
    /// sign of `alpha2` flipped: `alpha1 v^2 + 2 alpha2 |v| + alpha3`.
    pub fn noise_quadratic_neg(&self, v_abs: f64) -> f64 {
        self.alpha1 * v_abs * v_abs + 2.0 * self.alpha2 * v_abs + self.alpha3
    }
}

/// Population moments of a sample set.
pub fn compute_moments(samples: &SampleSet) -> MomentSummary {
    let n = samples.len() as f64;
    let mut sx2 = 0.0;
    let mut sxy = 0.0;
    let mut sx4 = 0.0;
    let mut sx3y = 0.0;
    let mut sx2y2 = 0.0;
    for (x, y) in samples.iter() {
        let x2 = x * x;
        let xy = x * y;
        sx2 += x2;
        sxy += xy;
        sx4 += x2 * x2;
        sx3y += x2 * xy;
        sx2y2 += xy * xy;
    }
    let beta1 = sx2 / n;
    let beta2 = sxy / n;
    let alpha1 = (sx4 / n - beta1 * beta1).max(0.0);
    let alpha2 = sx3y / n - beta1 * beta2;
    let alpha3 = (sx2y2 / n - beta2 * beta2).max(0.0);
    MomentSummary::from_parts(alpha1, alpha2, alpha3, beta1, beta2)
}

/// Analytic moments for `x ~ N(0,1)`, `y = k x + eps`, `eps ~ N(0, sigma^2)`.
///
/// Follows from the Gaussian identities `E[x^2] = 1`, `E[x^4] = 3`.
pub fn gaussian_linear_moments(k: f64, sigma: f64) -> MomentSummary {
    let s2 = sigma * sigma;
    MomentSummary::from_parts(2.0, 2.0 * k, 2.0 * k * k + s2, 1.0, k)
}

fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `y = k x + sigma * N(0,1)` with `x ~ N(0,1)`. Deterministic per seed.
pub fn synth_linear_dataset(k: f64, sigma: f64, n: usize, seed: u64) -> Result<SampleSet> {
    if n < 2 {
        return Err(Error::DegenerateSampleSet(n));
    }
    if sigma < 0.0 {
        return Err(Error::Domain("sigma must be nonnegative".into()));
    }
    let mut rng = seeded_rng(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.sample(StandardNormal);
        let eps: f64 = rng.sample(StandardNormal);
        xs.push(x);
        ys.push(k * x + sigma * eps);
    }
    SampleSet::new(xs, ys)
}

/// `y = k x - k c / x`, the family for which `delta = 0` exactly per sample
/// (`xy + kc = k x^2`, so `beta2 = k (beta1 - c)`). Resamples `x` until
/// `|x| > 1e-3` to keep `y` finite.
pub fn synth_delta_zero_dataset(k: f64, c: f64, n: usize, seed: u64) -> Result<SampleSet> {
    if n < 2 {
        return Err(Error::DegenerateSampleSet(n));
    }
    let mut rng = seeded_rng(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    while xs.len() < n {
        let x: f64 = rng.sample(StandardNormal);
        if x.abs() <= 1e-3 {
            continue;
        }
        xs.push(x);
        ys.push(k * x - k * c / x);
    }
    SampleSet::new(xs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_products_give_zero_alphas() {
        // x^2 and xy are both constant here.
        let s = SampleSet::new(vec![1.0, -1.0], vec![1.0, -1.0]).unwrap();
        let m = compute_moments(&s);
        assert_eq!(m.alpha1, 0.0);
        assert_eq!(m.alpha2, 0.0);
        assert_eq!(m.alpha3, 0.0);
        assert_eq!(m.beta1, 1.0);
        assert_eq!(m.beta2, 1.0);
        assert_eq!(m.delta, 0.0);
    }

    #[test]
    fn zero_labels_kill_y_moments() {
        let s = SampleSet::new(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        let m = compute_moments(&s);
        assert_eq!(m.beta2, 0.0);
        assert_eq!(m.alpha2, 0.0);
        assert_eq!(m.alpha3, 0.0);
        assert_relative_eq!(m.beta1, 2.5);
        // Var[{1,4}] = 2.25 with population normalization.
        assert_relative_eq!(m.alpha1, 2.25);
        assert_eq!(m.delta, 0.0);
    }

    #[test]
    fn gaussian_linear_moments_match_monte_carlo() {
        // Monte-Carlo oracle for x~N(0,1), y=x+eps at large n; expected
        // values frozen from the Gaussian identities E[x^2]=1, E[x^4]=3.
        let s = synth_linear_dataset(1.0, 1.0, 1_000_000, 42).unwrap();
        let m = compute_moments(&s);
        assert_relative_eq!(m.alpha1, 2.0, max_relative = 0.02);
        assert_relative_eq!(m.alpha2, 2.0, max_relative = 0.02);
        assert_relative_eq!(m.alpha3, 3.0, max_relative = 0.02);
        assert_relative_eq!(m.beta1, 1.0, max_relative = 0.02);
        assert_relative_eq!(m.beta2, 1.0, max_relative = 0.02);
        assert_relative_eq!(m.delta, 2.0, max_relative = 0.05);
    }

    #[test]
    fn critical_temperature_from_synthetic_data() {
        // T_c = beta2/alpha3 = 1/3 for k=1, sigma=1.
        let s = synth_linear_dataset(1.0, 1.0, 1_000_000, 1).unwrap();
        let m = compute_moments(&s);
        assert_relative_eq!(m.beta2 / m.alpha3, 1.0 / 3.0, max_relative = 0.02);
    }

    #[test]
    fn zero_noise_labels_equal_inputs() {
        let s = synth_linear_dataset(1.0, 0.0, 4, 7).unwrap();
        assert_eq!(s.xs(), s.ys());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = synth_linear_dataset(1.0, 1.0, 1000, 1).unwrap();
        let b = synth_linear_dataset(1.0, 1.0, 1000, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn delta_zero_family_is_exact_per_sample() {
        let k = 1.3;
        let c = 0.5;
        let s = synth_delta_zero_dataset(k, c, 10_000, 3).unwrap();
        for (x, y) in s.iter() {
            assert_relative_eq!(x * y + k * c, k * x * x, max_relative = 1e-12);
        }
    }

    #[test]
    fn delta_zero_moments() {
        // beta2 = k*E[x^2] - k*c per the y = kx - kc/x identities; delta -> 0.
        let k = 1.0;
        let c = 0.5;
        let s = synth_delta_zero_dataset(k, c, 1_000_000, 3).unwrap();
        let m = compute_moments(&s);
        assert!(m.delta < 1e-4 * m.alpha1 * m.alpha3, "delta = {}", m.delta);
        assert_relative_eq!(m.beta2, k * m.beta1 - k * c, max_relative = 1e-9);
    }

    #[test]
    fn delta_zero_without_offset_is_interpolation() {
        let s = synth_delta_zero_dataset(1.0, 0.0, 10_000, 3).unwrap();
        let m = compute_moments(&s);
        assert!(m.delta.abs() < 1e-8 * m.alpha1 * m.alpha3 + 1e-30);
        assert_relative_eq!(m.beta2, m.beta1, max_relative = 1e-12);
    }

    #[test]
    fn interpolation_identities() {
        // For y = kx exactly: alpha2 = k*alpha1, alpha3 = k^2*alpha1,
        // beta2 = k*beta1.
        let k = -0.7;
        let xs: Vec<f64> = (0..100).map(|i| 0.1 * (i as f64) - 5.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| k * x).collect();
        let m = compute_moments(&SampleSet::new(xs, ys).unwrap());
        assert_relative_eq!(m.alpha2, k * m.alpha1, max_relative = 1e-12);
        assert_relative_eq!(m.alpha3, k * k * m.alpha1, max_relative = 1e-12);
        assert_relative_eq!(m.beta2, k * m.beta1, max_relative = 1e-12);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(matches!(
            SampleSet::new(vec![1.0], vec![1.0]),
            Err(Error::DegenerateSampleSet(1))
        ));
        assert!(synth_linear_dataset(1.0, 1.0, 1, 0).is_err());
        assert!(synth_delta_zero_dataset(1.0, 0.5, 0, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = synth_linear_dataset(2.0, 0.3, 17, 9).unwrap();
        let back = SampleSet::from_csv(&s.to_csv()).unwrap();
        for ((x0, y0), (x1, y1)) in s.iter().zip(back.iter()) {
            assert_relative_eq!(x0, x1, max_relative = 1e-15);
            assert_relative_eq!(y0, y1, max_relative = 1e-15);
        }
    }

    #[test]
    fn moments_json_field_names() {
        let m = gaussian_linear_moments(1.0, 1.0);
        let json = serde_json::to_value(m).unwrap();
        for key in ["alpha1", "alpha2", "alpha3", "beta1", "beta2", "delta"] {
            assert!(json.get(key).is_some(), "missing field {key}");
        }
    }
}
