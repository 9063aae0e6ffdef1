//! Closed-form stationary densities of the reduced SGD dynamics, their
//! normalization, critical temperatures, regime classification, the maximum
//! likelihood point, tail exponents, and the Gibbs reference density.
//!
//! All densities are handled in log space: the exponents scale like `1/T`
//! and overflow `f64` long before the temperatures of interest are reached.
//! Conventions for weight decay `gamma`: the depth-0 density shifts
//! `beta1 -> beta1 + gamma`; depth >= 1 shifts `beta2 -> beta2 - gamma`;
//! the degenerate-data cases shift `beta1 -> beta1 -/+ gamma/k` on the
//! aligned / anti-aligned branch.

use serde::{Deserialize, Serialize};

use crate::dynamics::reduced_drift_diffusion;
use crate::models::ScalarModel;
use crate::moments::{MomentSummary, SampleSet};
use crate::quadrature::{adaptive, integrate_algebraic_tail, integrate_power_singularity};
use crate::{Error, Result};

const QUAD_REL: f64 = 1e-9;
const QUAD_ABS: f64 = 1e-12;
/// Log-density drop below the maximum treated as numerically zero mass.
const LOG_FLOOR: f64 = -745.0;

/// Which branch of a degenerate-data density: `u = w` (aligned with the
/// positive data correlation) or `u = -w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Aligned,
    AntiAligned,
}

/// Which closed-form density applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DensityCase {
    Depth0,
    Depth1,
    GeneralD { depth: usize, width: usize },
    /// Infinite-depth limit at fixed width/depth ratio `d/D`.
    InfiniteD { width_depth_ratio: f64 },
    /// Degenerate data `y = k x` (aligned branch; the other branch is a
    /// delta at zero).
    InterpolationD1 { k: f64 },
    /// Degenerate data `y = k x - k c / x`.
    DeltaZeroC { k: f64, c: f64, branch: Branch },
}

/// Outcome of normalizing the continuous part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NormState {
    /// `log` of the integral of the unnormalized density over the domain.
    Finite { log_norm: f64 },
    /// The continuous part is non-normalizable at zero: the stationary
    /// density is `delta(v)`.
    Delta,
    /// Mass concentrates at the zero-loss interpolation point `v`.
    ConcentratedAtMin { v: f64 },
}

fn check_positive_delta(m: &MomentSummary) -> Result<f64> {
    if m.delta <= 0.0 {
        return Err(Error::DeltaNotPositive);
    }
    Ok(m.delta.sqrt())
}

fn check_temp(temp: f64) -> Result<()> {
    if temp <= 0.0 {
        return Err(Error::Domain(format!("temperature {temp} must be > 0")));
    }
    Ok(())
}

fn atan_term(m: &MomentSummary, sqrt_delta: f64, v: f64) -> f64 {
    ((m.alpha1 * v - m.alpha2) / sqrt_delta).atan()
}

/// Unnormalized log-density of the depth-0 model, valid on all of `R`.
pub fn log_pdf_depth0(v: f64, m: &MomentSummary, temp: f64, gamma: f64) -> Result<f64> {
    check_temp(temp)?;
    let sd = check_positive_delta(m)?;
    let b1 = m.beta1 + gamma;
    let g = m.noise_quadratic(v);
    let coef = (m.alpha2 * b1 - m.alpha1 * m.beta2) / (m.alpha1 * sd);
    Ok(-(1.0 + b1 / (2.0 * temp * m.alpha1)) * g.ln() - coef / temp * atan_term(m, sd, v))
}

/// Analytic `d/dv` of [`log_pdf_depth0`].
pub fn dlogp_depth0(v: f64, m: &MomentSummary, temp: f64, gamma: f64) -> Result<f64> {
    check_temp(temp)?;
    check_positive_delta(m)?;
    let b1 = m.beta1 + gamma;
    let g = m.noise_quadratic(v);
    let gp = 2.0 * m.alpha1 * v - 2.0 * m.alpha2;
    Ok(-(1.0 + b1 / (2.0 * temp * m.alpha1)) * gp / g
        - (m.alpha2 * b1 - m.alpha1 * m.beta2) / (temp * m.alpha1 * g))
}

/// Unnormalized log-density of the depth-1 model on `v > 0`; the negative
/// branch carries no continuous part (it is a delta at zero).
pub fn log_pdf_depth1(v: f64, m: &MomentSummary, temp: f64, gamma: f64) -> Result<f64> {
    check_temp(temp)?;
    let sd = check_positive_delta(m)?;
    if v <= 0.0 {
        return Err(Error::Domain(format!(
            "depth-1 density is defined for v > 0, got {v}"
        )));
    }
    let b2 = m.beta2 - gamma;
    let g = m.noise_quadratic(v);
    let coef = (m.alpha3 * m.beta1 - m.alpha2 * b2) / (m.alpha3 * sd);
    Ok((b2 / (2.0 * m.alpha3 * temp) - 1.5) * v.ln()
        - (1.0 + b2 / (4.0 * temp * m.alpha3)) * g.ln()
        - coef / (2.0 * temp) * atan_term(m, sd, v))
}

/// Analytic `d/dv` of [`log_pdf_depth1`].
pub fn dlogp_depth1(v: f64, m: &MomentSummary, temp: f64, gamma: f64) -> Result<f64> {
    check_temp(temp)?;
    check_positive_delta(m)?;
    if v <= 0.0 {
        return Err(Error::Domain("dlogp_depth1 needs v > 0".into()));
    }
    let b2 = m.beta2 - gamma;
    let g = m.noise_quadratic(v);
    let gp = 2.0 * m.alpha1 * v - 2.0 * m.alpha2;
    Ok((b2 / (2.0 * m.alpha3 * temp) - 1.5) / v
        - (1.0 + b2 / (4.0 * temp * m.alpha3)) * gp / g
        - (m.alpha3 * m.beta1 - m.alpha2 * b2) / (2.0 * temp * m.alpha3 * g))
}

fn general_d_integrand(s: f64, m: &MomentSummary, b2: f64, depth: usize, width: usize, sign: f64) -> f64 {
    // `sign = +1` for v > 0 (uses -beta2 and g with -2 alpha2 s), `-1` for
    // the mirrored branch.
    let dp1 = (depth + 1) as f64;
    let dd = depth as f64;
    let wf = (width as f64).powf(1.0 - 2.0 / dp1);
    let g = m.alpha1 * s * s - sign * 2.0 * m.alpha2 * s + m.alpha3;
    wf * (m.beta1 * s - sign * b2) / (dp1 * s.powf(2.0 * dd / dp1) * g)
}

/// Unnormalized log-density for general depth `D >= 1` and effective width
/// `d >= 1`. The inner integral runs from the reference point
/// `v_ref = beta2 / beta1`; the shift only moves the normalization.
pub fn log_pdf_general_d(
    v: f64,
    m: &MomentSummary,
    temp: f64,
    gamma: f64,
    depth: usize,
    width: usize,
) -> Result<f64> {
    check_temp(temp)?;
    check_positive_delta(m)?;
    if depth < 1 || width < 1 {
        return Err(Error::Domain(format!(
            "general-D density needs D >= 1 and d >= 1, got D = {depth}, d = {width}"
        )));
    }
    if v == 0.0 {
        return Err(Error::Domain("general-D density is undefined at v = 0".into()));
    }
    let b2 = m.beta2 - gamma;
    let sign = if v > 0.0 { 1.0 } else { -1.0 };
    let s = v.abs();
    let v_ref = if b2 > 0.0 && m.beta1 > 0.0 { b2 / m.beta1 } else { 1.0 };
    let inner = adaptive(
        |t| general_d_integrand(t, m, b2, depth, width, sign),
        v_ref,
        s,
        QUAD_REL,
        QUAD_ABS,
    )?;
    let dd = depth as f64;
    let dp1 = (depth + 1) as f64;
    let g = m.alpha1 * s * s - sign * 2.0 * m.alpha2 * s + m.alpha3;
    Ok(-3.0 * dd / dp1 * s.ln() - g.ln() - inner.value / temp)
}

/// Analytic `d/dv` of [`log_pdf_general_d`] on `v > 0`.
pub fn dlogp_general_d(
    v: f64,
    m: &MomentSummary,
    temp: f64,
    gamma: f64,
    depth: usize,
    width: usize,
) -> Result<f64> {
    check_temp(temp)?;
    check_positive_delta(m)?;
    if v <= 0.0 {
        return Err(Error::Domain("dlogp_general_d needs v > 0".into()));
    }
    let b2 = m.beta2 - gamma;
    let dd = depth as f64;
    let dp1 = (depth + 1) as f64;
    let g = m.noise_quadratic(v);
    let gp = 2.0 * m.alpha1 * v - 2.0 * m.alpha2;
    Ok(-3.0 * dd / (dp1 * v) - gp / g - general_d_integrand(v, m, b2, depth, width, 1.0) / temp)
}

/// Unnormalized log-density in the infinite-depth limit at width/depth
/// ratio `d/D` on `v > 0`.
pub fn log_pdf_infinite_d(
    v: f64,
    m: &MomentSummary,
    temp: f64,
    gamma: f64,
    ratio: f64,
) -> Result<f64> {
    check_temp(temp)?;
    let sd = check_positive_delta(m)?;
    if v <= 0.0 {
        return Err(Error::Domain("infinite-D density needs v > 0".into()));
    }
    if ratio < 0.0 {
        return Err(Error::Domain("width/depth ratio must be >= 0".into()));
    }
    let b2 = m.beta2 - gamma;
    let a3 = m.alpha3;
    let k1 = ratio * (a3 * m.beta1 - 2.0 * m.alpha2 * b2) / (temp * a3 * a3);
    let mm = m.alpha2 * a3 * m.beta1 - 2.0 * m.alpha2 * m.alpha2 * b2 + m.alpha1 * a3 * b2;
    let g = m.noise_quadratic(v);
    Ok(-(3.0 + k1) * v.ln()
        - (1.0 - 0.5 * k1) * g.ln()
        - ratio / temp * (b2 / (a3 * v) + mm / (a3 * a3 * sd) * atan_term(m, sd, v)))
}

/// Analytic `d/dv` of [`log_pdf_infinite_d`].
pub fn dlogp_infinite_d(
    v: f64,
    m: &MomentSummary,
    temp: f64,
    gamma: f64,
    ratio: f64,
) -> Result<f64> {
    check_temp(temp)?;
    check_positive_delta(m)?;
    if v <= 0.0 {
        return Err(Error::Domain("dlogp_infinite_d needs v > 0".into()));
    }
    let b2 = m.beta2 - gamma;
    let a3 = m.alpha3;
    let k1 = ratio * (a3 * m.beta1 - 2.0 * m.alpha2 * b2) / (temp * a3 * a3);
    let mm = m.alpha2 * a3 * m.beta1 - 2.0 * m.alpha2 * m.alpha2 * b2 + m.alpha1 * a3 * b2;
    let g = m.noise_quadratic(v);
    let gp = 2.0 * m.alpha1 * v - 2.0 * m.alpha2;
    Ok(-(3.0 + k1) / v
        - (1.0 - 0.5 * k1) * gp / g
        - ratio / temp * (-b2 / (a3 * v * v) + mm / (a3 * a3 * g)))
}

/// Unnormalized log-densities of the degenerate-data cases. `case` must be
/// one of the two special variants; the value is the density of `|v|` on
/// the stated domain.
pub fn log_pdf_special(
    v: f64,
    case: &DensityCase,
    m: &MomentSummary,
    temp: f64,
    gamma: f64,
) -> Result<f64> {
    check_temp(temp)?;
    match *case {
        DensityCase::InterpolationD1 { k } => {
            check_special_k(k)?;
            if v <= 0.0 || v >= k {
                return Err(Error::Domain(format!(
                    "interpolation density lives on 0 < v < k = {k}, got {v}"
                )));
            }
            let theta2 = (m.beta1 - gamma / k) / (2.0 * temp * m.alpha1 * k);
            let mut lp = (-1.5 + theta2) * v.ln() - (2.0 + theta2) * (k - v).ln();
            if gamma > 0.0 {
                lp -= m.beta1 * gamma / (2.0 * temp * m.alpha1 * k) / (k - v);
            }
            Ok(lp)
        }
        DensityCase::DeltaZeroC { k, c, branch } => {
            check_special_k(k)?;
            if c == 0.0 {
                return Err(Error::UnsupportedCase(
                    "DeltaZeroC with c = 0 (use InterpolationD1)".into(),
                ));
            }
            match branch {
                Branch::Aligned => {
                    let ok = if c > 0.0 { v > 0.0 && v < k } else { v > k };
                    if !ok {
                        return Err(Error::Domain(format!(
                            "aligned DeltaZeroC density domain excludes v = {v}"
                        )));
                    }
                    let phi2 = (m.beta1 - gamma / k - c) / (2.0 * temp * m.alpha1 * k);
                    Ok((-1.5 + phi2) * v.ln() - (2.0 + phi2) * (v - k).abs().ln()
                        - c / (2.0 * temp * m.alpha1) / (k - v))
                }
                Branch::AntiAligned => {
                    if v <= 0.0 {
                        return Err(Error::Domain(
                            "anti-aligned DeltaZeroC density needs |v| > 0".into(),
                        ));
                    }
                    let phi2 = (m.beta1 + gamma / k - c) / (2.0 * temp * m.alpha1 * k);
                    Ok((-1.5 - phi2) * v.ln() - (2.0 - phi2) * (v + k).ln()
                        + c / (2.0 * temp * m.alpha1) / (k + v))
                }
            }
        }
        _ => Err(Error::UnsupportedCase(format!("{case:?}"))),
    }
}

fn check_special_k(k: f64) -> Result<()> {
    if k <= 0.0 {
        return Err(Error::Domain(format!("special cases need k > 0, got {k}")));
    }
    Ok(())
}

fn dlogp_special(v: f64, case: &DensityCase, m: &MomentSummary, temp: f64, gamma: f64) -> Result<f64> {
    match *case {
        DensityCase::InterpolationD1 { k } => {
            let theta2 = (m.beta1 - gamma / k) / (2.0 * temp * m.alpha1 * k);
            let mut d = (-1.5 + theta2) / v + (2.0 + theta2) / (k - v);
            if gamma > 0.0 {
                d -= m.beta1 * gamma / (2.0 * temp * m.alpha1 * k) / ((k - v) * (k - v));
            }
            Ok(d)
        }
        DensityCase::DeltaZeroC { k, c, branch } => match branch {
            Branch::Aligned => {
                let phi2 = (m.beta1 - gamma / k - c) / (2.0 * temp * m.alpha1 * k);
                Ok((-1.5 + phi2) / v - (2.0 + phi2) / (v - k)
                    - c / (2.0 * temp * m.alpha1) / ((k - v) * (k - v)))
            }
            Branch::AntiAligned => {
                let phi2 = (m.beta1 + gamma / k - c) / (2.0 * temp * m.alpha1 * k);
                Ok((-1.5 - phi2) / v - (2.0 - phi2) / (v + k)
                    - c / (2.0 * temp * m.alpha1) / ((k + v) * (k + v)))
            }
        },
        _ => Err(Error::UnsupportedCase(format!("{case:?}"))),
    }
}

/// Integration plan for the continuous part of a density.
#[derive(Debug, Clone)]
enum Plan {
    /// Whole-line density mapped through `v = (alpha2 + sqrt(D) tan t) / alpha1`.
    WholeLine { log_offset: f64 },
    /// Half-line or interval density.
    HalfLine {
        lo: f64,
        hi: f64,
        /// Local power exponent at `lo` (`None`: the density vanishes
        /// faster than any power there).
        origin_exp: Option<f64>,
        /// Interior split point (near the density maximum).
        mid: f64,
        /// Algebraic tail handled by `1/v` substitution beyond this point.
        tail_split: Option<f64>,
        log_offset: f64,
    },
}

/// A normalized stationary density `p*(v) = z delta(v) + p(v)` where the
/// continuous part `p` integrates to `1 - z`.
#[derive(Debug, Clone)]
pub struct StationaryDensity {
    pub case: DensityCase,
    pub moments: MomentSummary,
    pub temp: f64,
    pub gamma: f64,
    /// Weight of the delta atom at zero.
    pub z: f64,
    pub domain: (f64, f64),
    pub norm: NormState,
    plan: Option<Plan>,
}

impl StationaryDensity {
    /// Build and normalize a density. `z` is the weight of the delta atom
    /// at zero (left free by the theory; estimated from absorbed
    /// trajectories on the simulation side).
    pub fn new(
        case: DensityCase,
        moments: MomentSummary,
        temp: f64,
        gamma: f64,
        z: f64,
    ) -> Result<Self> {
        check_temp(temp)?;
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::InvalidConfig(format!("z = {z} outside [0, 1]")));
        }
        let mut density = Self {
            case,
            moments,
            temp,
            gamma,
            z,
            domain: (0.0, f64::INFINITY),
            norm: NormState::Delta,
            plan: None,
        };
        density.normalize()?;
        Ok(density)
    }

    /// Unnormalized log-density of the continuous part.
    pub fn log_unnormalized(&self, v: f64) -> Result<f64> {
        let m = &self.moments;
        match self.case {
            DensityCase::Depth0 => log_pdf_depth0(v, m, self.temp, self.gamma),
            DensityCase::Depth1 => log_pdf_depth1(v, m, self.temp, self.gamma),
            DensityCase::GeneralD { depth, width } => {
                log_pdf_general_d(v, m, self.temp, self.gamma, depth, width)
            }
            DensityCase::InfiniteD { width_depth_ratio } => {
                log_pdf_infinite_d(v, m, self.temp, self.gamma, width_depth_ratio)
            }
            DensityCase::InterpolationD1 { .. } | DensityCase::DeltaZeroC { .. } => {
                log_pdf_special(v, &self.case, m, self.temp, self.gamma)
            }
        }
    }

    /// Analytic `d/dv log p` of the continuous part.
    pub fn dlog_dv(&self, v: f64) -> Result<f64> {
        let m = &self.moments;
        match self.case {
            DensityCase::Depth0 => dlogp_depth0(v, m, self.temp, self.gamma),
            DensityCase::Depth1 => dlogp_depth1(v, m, self.temp, self.gamma),
            DensityCase::GeneralD { depth, width } => {
                dlogp_general_d(v, m, self.temp, self.gamma, depth, width)
            }
            DensityCase::InfiniteD { width_depth_ratio } => {
                dlogp_infinite_d(v, m, self.temp, self.gamma, width_depth_ratio)
            }
            DensityCase::InterpolationD1 { .. } | DensityCase::DeltaZeroC { .. } => {
                dlogp_special(v, &self.case, m, self.temp, self.gamma)
            }
        }
    }

    pub fn is_delta(&self) -> bool {
        matches!(self.norm, NormState::Delta)
    }

    /// Normalized density of the continuous part (integrates to `1 - z`);
    /// zero outside the domain and for collapsed densities.
    pub fn pdf(&self, v: f64) -> f64 {
        let NormState::Finite { log_norm } = self.norm else {
            return 0.0;
        };
        if v <= self.domain.0 || v >= self.domain.1 {
            return 0.0;
        }
        match self.log_unnormalized(v) {
            Ok(lp) => (1.0 - self.z) * (lp - log_norm).exp(),
            Err(_) => 0.0,
        }
    }

    fn normalize(&mut self) -> Result<()> {
        let m = self.moments;
        let (temp, gamma) = (self.temp, self.gamma);
        match self.case {
            DensityCase::Depth0 => {
                self.domain = (f64::NEG_INFINITY, f64::INFINITY);
                let offset = self.scan_offset_theta();
                self.plan = Some(Plan::WholeLine { log_offset: offset });
                let z = self.integrate_raw(|_| 1.0)?;
                self.norm = NormState::Finite { log_norm: offset + z.ln() };
            }
            DensityCase::Depth1 => {
                let b2 = m.beta2 - gamma;
                let q0 = b2 / (2.0 * m.alpha3 * temp) - 1.5;
                if q0 <= -1.0 {
                    self.norm = NormState::Delta;
                    return Ok(());
                }
                self.finish_half_line(0.0, f64::INFINITY, Some(q0), true)?;
            }
            DensityCase::GeneralD { depth, .. } => {
                let b2 = m.beta2 - gamma;
                if depth == 1 {
                    let q0 = b2 / (2.0 * m.alpha3 * temp) - 1.5;
                    if q0 <= -1.0 {
                        self.norm = NormState::Delta;
                        return Ok(());
                    }
                    self.finish_half_line(0.0, f64::INFINITY, Some(q0), true)?;
                } else {
                    if b2 <= 0.0 {
                        self.norm = NormState::Delta;
                        return Ok(());
                    }
                    // The inner integral produces an essential suppression
                    // exp(-C v^{-(D-1)/(D+1)} / T) at the origin.
                    self.finish_half_line(0.0, f64::INFINITY, None, true)?;
                }
            }
            DensityCase::InfiniteD { width_depth_ratio } => {
                let b2 = m.beta2 - gamma;
                if width_depth_ratio == 0.0 || b2 <= 0.0 {
                    self.norm = NormState::Delta;
                    return Ok(());
                }
                self.finish_half_line(0.0, f64::INFINITY, None, true)?;
            }
            DensityCase::InterpolationD1 { k } => {
                check_special_k(k)?;
                self.domain = (0.0, k);
                let theta2 = (m.beta1 - gamma / k) / (2.0 * temp * m.alpha1 * k);
                let q0 = -1.5 + theta2;
                if q0 <= -1.0 {
                    self.norm = NormState::Delta;
                } else if gamma == 0.0 {
                    // The (k - v)^{-2-theta2} endpoint is non-integrable:
                    // all continuous mass piles up at the zero-loss point.
                    self.norm = NormState::ConcentratedAtMin { v: k };
                } else {
                    self.finish_half_line(0.0, k, Some(q0), false)?;
                }
            }
            DensityCase::DeltaZeroC { k, c, branch } => {
                check_special_k(k)?;
                if c == 0.0 {
                    return Err(Error::UnsupportedCase(
                        "DeltaZeroC with c = 0 (use InterpolationD1)".into(),
                    ));
                }
                match branch {
                    Branch::Aligned => {
                        let b1 = m.beta1 - gamma / k;
                        if c > 0.0 {
                            self.domain = (0.0, k);
                            let phi2 = (b1 - c) / (2.0 * temp * m.alpha1 * k);
                            let q0 = -1.5 + phi2;
                            if q0 <= -1.0 {
                                self.norm = NormState::Delta;
                            } else {
                                self.finish_half_line(0.0, k, Some(q0), false)?;
                            }
                        } else {
                            // Support is v > k; the (v-k) endpoint is
                            // suppressed by the essential exponential.
                            self.finish_half_line(k, f64::INFINITY, None, true)?;
                        }
                    }
                    Branch::AntiAligned => {
                        let b1 = m.beta1 + gamma / k;
                        if c <= b1 + m.alpha1 * k * temp {
                            self.domain = (0.0, f64::INFINITY);
                            self.norm = NormState::Delta;
                        } else {
                            let phi2 = (b1 - c) / (2.0 * temp * m.alpha1 * k);
                            self.finish_half_line(0.0, f64::INFINITY, Some(-1.5 - phi2), true)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Scan the log-density, pick an offset and interior split, and run the
    /// normalization quadrature for a domain bounded below at `lo`.
    fn finish_half_line(
        &mut self,
        lo: f64,
        hi: f64,
        origin_exp: Option<f64>,
        tail: bool,
    ) -> Result<()> {
        self.domain = (lo, hi);
        let (mid, offset) = self.scan_half_line(lo, hi)?;
        let tail_split = tail.then(|| 10.0 * mid.max(1.0).max(lo));
        self.plan = Some(Plan::HalfLine {
            lo,
            hi,
            origin_exp,
            mid,
            tail_split,
            log_offset: offset,
        });
        let z = self.integrate_raw(|_| 1.0)?;
        if !z.is_finite() || z <= 0.0 {
            return Err(Error::Quadrature(format!(
                "normalization produced {z}; case {:?}",
                self.case
            )));
        }
        self.norm = NormState::Finite { log_norm: offset + z.ln() };
        Ok(())
    }

    /// Coarse scan for the log-density maximum on `(lo, hi)`.
    fn scan_half_line(&self, lo: f64, hi: f64) -> Result<(f64, f64)> {
        let n = 240;
        let mut best = f64::NEG_INFINITY;
        let mut best_v = f64::NAN;
        let points: Vec<f64> = if hi.is_finite() {
            (1..n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
        } else {
            // Log-spaced offsets above lo from 1e-6 to 1e4.
            (0..n)
                .map(|i| lo + 10f64.powf(-6.0 + 10.0 * i as f64 / (n - 1) as f64))
                .collect()
        };
        for v in points {
            if let Ok(lp) = self.log_unnormalized(v) {
                if lp.is_finite() && lp > best {
                    best = lp;
                    best_v = v;
                }
            }
        }
        if !best.is_finite() {
            return Err(Error::Quadrature(format!(
                "log-density scan found no finite values; case {:?}",
                self.case
            )));
        }
        Ok((best_v, best))
    }

    fn scan_offset_theta(&self) -> f64 {
        let m = &self.moments;
        let sd = m.delta.sqrt();
        let mut best = f64::NEG_INFINITY;
        for i in 1..240 {
            let t = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / 240.0;
            let v = (m.alpha2 + sd * t.tan()) / m.alpha1;
            if let Ok(lp) = self.log_unnormalized(v) {
                best = best.max(lp);
            }
        }
        best
    }

    /// Integral of `w(v) exp(log p - offset)` over the domain.
    fn integrate_raw<W: Fn(f64) -> f64>(&self, w: W) -> Result<f64> {
        let plan = self
            .plan
            .as_ref()
            .ok_or_else(|| Error::Quadrature("density has no continuous plan".into()))?;
        match *plan {
            Plan::WholeLine { log_offset } => {
                self.integrate_theta(&w, log_offset, -std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2)
            }
            Plan::HalfLine {
                lo,
                hi,
                origin_exp,
                mid,
                tail_split,
                log_offset,
            } => {
                let h = |v: f64| -> f64 {
                    if v <= lo || v >= hi {
                        return 0.0;
                    }
                    match self.log_unnormalized(v) {
                        Ok(lp) if lp - log_offset > LOG_FLOOR => (lp - log_offset).exp() * w(v),
                        _ => 0.0,
                    }
                };
                let mut total = 0.0;
                match origin_exp {
                    Some(q) => {
                        total += integrate_power_singularity(
                            |t| h(lo + t),
                            mid - lo,
                            q,
                            QUAD_REL,
                            QUAD_ABS,
                        )?
                        .value;
                    }
                    None => {
                        total += adaptive(&h, lo, mid, QUAD_REL, QUAD_ABS)?.value;
                    }
                }
                match tail_split {
                    Some(split) => {
                        total += adaptive(&h, mid, split, QUAD_REL, QUAD_ABS)?.value;
                        total += integrate_algebraic_tail(&h, split, QUAD_REL, QUAD_ABS)?.value;
                    }
                    None => {
                        total += adaptive(&h, mid, hi, QUAD_REL, QUAD_ABS)?.value;
                    }
                }
                Ok(total)
            }
        }
    }

    /// Whole-line integral via the arctangent substitution
    /// `v = (alpha2 + sqrt(Delta) tan t) / alpha1`, which regularizes both
    /// algebraic tails of the depth-0 density.
    fn integrate_theta<W: Fn(f64) -> f64>(
        &self,
        w: &W,
        log_offset: f64,
        t_lo: f64,
        t_hi: f64,
    ) -> Result<f64> {
        let m = self.moments;
        let sd = m.delta.sqrt();
        let f = |t: f64| -> f64 {
            if t <= -std::f64::consts::FRAC_PI_2 + 1e-12 || t >= std::f64::consts::FRAC_PI_2 - 1e-12 {
                return 0.0;
            }
            let tan = t.tan();
            let v = (m.alpha2 + sd * tan) / m.alpha1;
            let jac = sd / m.alpha1 * (1.0 + tan * tan);
            match self.log_unnormalized(v) {
                Ok(lp) if lp - log_offset > LOG_FLOOR => (lp - log_offset).exp() * jac * w(v),
                _ => 0.0,
            }
        };
        Ok(adaptive(f, t_lo, t_hi, QUAD_REL, QUAD_ABS)?.value)
    }

    /// Integral of `w(v)` against the normalized continuous part divided by
    /// its mass `1 - z` (i.e. the expectation conditional on not sitting in
    /// the atom).
    pub fn expect<W: Fn(f64) -> f64>(&self, w: W) -> Result<f64> {
        let NormState::Finite { log_norm } = self.norm else {
            return Err(Error::Domain(
                "expectation undefined: density has no continuous part".into(),
            ));
        };
        let plan_offset = match self.plan.as_ref() {
            Some(Plan::WholeLine { log_offset }) | Some(Plan::HalfLine { log_offset, .. }) => {
                *log_offset
            }
            None => unreachable!("Finite norm implies a plan"),
        };
        let raw = self.integrate_raw(w)?;
        Ok(raw * (plan_offset - log_norm).exp())
    }

    /// Continuous-part mass on `[a, b]` (includes the `1 - z` factor, not
    /// the atom).
    pub fn mass_between(&self, a: f64, b: f64) -> Result<f64> {
        if b <= a {
            return Ok(0.0);
        }
        let NormState::Finite { log_norm } = self.norm else {
            return Ok(0.0);
        };
        let m = self.moments;
        match self.plan.as_ref() {
            Some(Plan::WholeLine { log_offset }) => {
                let sd = m.delta.sqrt();
                let to_t = |v: f64| -> f64 {
                    if v == f64::NEG_INFINITY {
                        -std::f64::consts::FRAC_PI_2
                    } else if v == f64::INFINITY {
                        std::f64::consts::FRAC_PI_2
                    } else {
                        ((m.alpha1 * v - m.alpha2) / sd).atan()
                    }
                };
                let raw = self.integrate_theta(&|_| 1.0, *log_offset, to_t(a), to_t(b))?;
                Ok((1.0 - self.z) * raw * (log_offset - log_norm).exp())
            }
            Some(Plan::HalfLine {
                lo,
                hi,
                origin_exp,
                mid,
                tail_split,
                log_offset,
            }) => {
                let (lo, hi, mid) = (*lo, *hi, *mid);
                let a = a.max(lo);
                let b = b.min(hi);
                if b <= a {
                    return Ok(0.0);
                }
                let h = |v: f64| -> f64 {
                    if v <= lo || v >= hi {
                        return 0.0;
                    }
                    match self.log_unnormalized(v) {
                        Ok(lp) if lp - log_offset > LOG_FLOOR => (lp - log_offset).exp(),
                        _ => 0.0,
                    }
                };
                let mut raw = 0.0;
                // Piece touching the lower domain edge.
                if a == lo {
                    let upper = b.min(mid);
                    match origin_exp {
                        Some(q) => {
                            raw += integrate_power_singularity(
                                |t| h(lo + t),
                                upper - lo,
                                *q,
                                QUAD_REL,
                                QUAD_ABS,
                            )?
                            .value;
                        }
                        None => {
                            raw += adaptive(&h, lo, upper, QUAD_REL, QUAD_ABS)?.value;
                        }
                    }
                }
                // Interior piece.
                let inner_lo = if a == lo { mid.min(b) } else { a };
                let split = tail_split.unwrap_or(f64::INFINITY);
                let inner_hi = b.min(split).min(hi);
                if inner_hi > inner_lo {
                    raw += adaptive(&h, inner_lo, inner_hi, QUAD_REL, QUAD_ABS)?.value;
                }
                // Tail piece.
                if let Some(split) = tail_split {
                    if b > *split {
                        let from = a.max(*split);
                        if b.is_infinite() {
                            raw += integrate_algebraic_tail(&h, from, QUAD_REL, QUAD_ABS)?.value;
                        } else {
                            raw += adaptive(&h, from, b, QUAD_REL, QUAD_ABS)?.value;
                        }
                    }
                }
                Ok((1.0 - self.z) * raw * (log_offset - log_norm).exp())
            }
            None => Ok(0.0),
        }
    }

    /// Mean and variance of the continuous part (conditional on the atom
    /// not being hit).
    pub fn moments_of_v(&self) -> Result<(f64, f64)> {
        let mean = self.expect(|v| v)?;
        let second = self.expect(|v| v * v)?;
        Ok((mean, (second - mean * mean).max(0.0)))
    }
}

/// Stationary Fokker-Planck probability current `J(v) = a p - (B^2 p)'/2`
/// of the reduced SDE matching the density's case, together with the scale
/// `|a p| + |(B^2 p)'|/2` for relative comparisons. Zero current (up to
/// numerics) certifies the closed form as a stationary solution.
pub fn fokker_planck_current(density: &StationaryDensity, v: f64) -> Result<(f64, f64)> {
    let (depth, width) = match density.case {
        DensityCase::Depth0 => (0, 1),
        DensityCase::Depth1 => (1, 1),
        DensityCase::GeneralD { depth, width } => (depth, width),
        _ => {
            return Err(Error::UnsupportedCase(format!(
                "no reduced SDE for {:?}",
                density.case
            )))
        }
    };
    let m = &density.moments;
    let (a, b_sq) = reduced_drift_diffusion(v, m, density.temp, density.gamma, depth, width);
    // d(B^2)/dv by central difference of the closed-form diffusion.
    let h = 1e-6 * v.abs().max(1e-3);
    let (_, b_hi) = reduced_drift_diffusion(v + h, m, density.temp, density.gamma, depth, width);
    let (_, b_lo) = reduced_drift_diffusion(v - h, m, density.temp, density.gamma, depth, width);
    let db_sq = (b_hi - b_lo) / (2.0 * h);
    let p = density.pdf(v);
    let dlogp = density.dlog_dv(v)?;
    let flux_drift = a * p;
    let flux_diff = 0.5 * (db_sq * p + b_sq * p * dlogp);
    let current = flux_drift - flux_diff;
    let scale = flux_drift.abs() + 0.5 * (db_sq * p).abs() + 0.5 * (b_sq * p * dlogp).abs();
    Ok((current, scale))
}

/// Critical temperatures of the depth-1 (and deeper) stationary family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalPoints {
    /// Collapse threshold `(beta2 - gamma) / alpha3`.
    pub t_c: f64,
    pub t_c_over_3: f64,
    /// Second-order (modified-loss) correction `beta2 / (alpha3 + beta2^2)`.
    pub t_c_modified: f64,
    /// Temperature above which the nontrivial probability maximum vanishes.
    pub t_star: Option<f64>,
    /// Window `(T1, T2)` without a nontrivial maximum, when it exists.
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    /// `beta2 <= gamma`: the collapsed phase covers every temperature.
    pub sparse_everywhere: bool,
    /// Which case of the maximum-point analysis applied.
    pub case_taken: String,
}

/// Critical temperatures; `t_star`/`t1`/`t2` are dropped when they fall
/// outside `t_range`.
pub fn critical_points(m: &MomentSummary, t_range: (f64, f64), gamma: f64) -> CriticalPoints {
    let b2 = m.beta2 - gamma;
    let t_c = b2 / m.alpha3;
    let mut out = CriticalPoints {
        t_c,
        t_c_over_3: t_c / 3.0,
        t_c_modified: m.beta2 / (m.alpha3 + m.beta2 * m.beta2),
        t_star: None,
        t1: None,
        t2: None,
        sparse_everywhere: b2 <= 0.0,
        case_taken: String::new(),
    };
    if out.sparse_everywhere {
        out.case_taken = "sparse everywhere (beta2 <= gamma)".into();
        return out;
    }
    let (a1, a2, a3, b1) = (m.alpha1, m.alpha2, m.alpha3, m.beta1);
    let in_range = |t: f64| (t_range.0..=t_range.1).contains(&t);
    let disc = 3.0 * a1 * a3 * b1 * b1 - 10.0 * a1 * a2 * b1 * b2 + 7.0 * a1 * a1 * b2 * b2;
    let denom = 2.0 * (21.0 * a1 * a3 - 25.0 * a2 * a2);
    let delta_rel = (a1 * a3 - a2 * a2) / (a1 * a3).abs().max(f64::MIN_POSITIVE);
    if delta_rel.abs() < 1e-12 {
        // Degenerate data, alpha2^2 = alpha1 alpha3.
        if 5.0 * a2 * b1 > 7.0 * a1 * b2 {
            let t = b1 * b1 / (20.0 * a2 * b1 - 28.0 * a1 * b2);
            out.t_star = in_range(t).then_some(t);
            out.case_taken = "alpha2^2 = alpha1 alpha3, critical T* exists".into();
        } else {
            out.case_taken = "alpha2^2 = alpha1 alpha3, maximum always exists".into();
        }
    } else if 21.0 * a1 * a3 > 25.0 * a2 * a2 {
        let t = (-5.0 * a2 * b1 + 7.0 * a1 * b2 + (7.0 * disc.max(0.0)).sqrt()) / denom;
        out.t_star = in_range(t).then_some(t);
        out.case_taken = "alpha1 alpha3 > (25/21) alpha2^2".into();
    } else if 5.0 * a2 * b1 < 7.0 * a1 * b2 {
        out.case_taken = "middle case, A > 0 everywhere; maximum always exists".into();
    } else {
        let thresh = (5.0 * a2 + (25.0 * a2 * a2 - 21.0 * a1 * a3).max(0.0).sqrt()) / (3.0 * a3);
        let ratio = b1 / b2;
        if ratio < thresh {
            out.case_taken = "middle case, min A > 0; maximum always exists".into();
        } else if disc <= 0.0 {
            let t = (5.0 * a2 * b1 - 7.0 * a1 * b2) / (2.0 * (25.0 * a2 * a2 - 21.0 * a1 * a3));
            out.t_star = in_range(t).then_some(t);
            out.case_taken = "middle case, tangency: single critical temperature".into();
        } else {
            let sq = (7.0 * disc).sqrt();
            let t1 = (-5.0 * a2 * b1 + 7.0 * a1 * b2 - sq) / denom;
            let t2 = (-5.0 * a2 * b1 + 7.0 * a1 * b2 + sq) / denom;
            let (t1, t2) = (t1.min(t2), t1.max(t2));
            out.t1 = in_range(t1).then_some(t1);
            out.t2 = in_range(t2).then_some(t2);
            out.case_taken = "middle case, two critical temperatures".into();
        }
    }
    out
}

/// Nonzero maximizer of the depth-1 density, when it exists.
pub fn mle_v(m: &MomentSummary, temp: f64, gamma: f64) -> Option<f64> {
    if temp <= 0.0 {
        return None;
    }
    let b2 = m.beta2 - gamma;
    let a = m.beta1 - 10.0 * m.alpha2 * temp;
    let disc = a * a + 28.0 * m.alpha1 * temp * (b2 - 3.0 * m.alpha3 * temp);
    if disc < 0.0 {
        return None;
    }
    let v = -(a - disc.sqrt()) / (14.0 * m.alpha1 * temp);
    (v > 0.0).then_some(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// `T >= T_c`: collapse to the delta at zero.
    I,
    /// `T_c/3 <= T < T_c`: integrable density diverging at the origin.
    II,
    /// `T < T_c/3`: density vanishing at the origin.
    III,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxKind {
    /// No nontrivial interior probability maximum.
    A,
    /// A nonzero maximizer exists.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub phase: Phase,
    pub max_kind: MaxKind,
}

pub fn regime_classify(m: &MomentSummary, temp: f64, gamma: f64) -> RegimeLabel {
    let t_c = (m.beta2 - gamma) / m.alpha3;
    let phase = if temp >= t_c {
        Phase::I
    } else if temp >= t_c / 3.0 {
        Phase::II
    } else {
        Phase::III
    };
    let max_kind = if mle_v(m, temp, gamma).is_some() {
        MaxKind::B
    } else {
        MaxKind::A
    };
    RegimeLabel { phase, max_kind }
}

/// Power-law tail exponent of the depth-`D` density; pass
/// `f64::INFINITY` for the infinite-depth limit.
pub fn tail_exponent(depth: f64) -> Result<f64> {
    if depth.is_infinite() && depth > 0.0 {
        return Ok(5.0);
    }
    if depth < 1.0 || depth.fract() != 0.0 {
        return Err(Error::Domain(format!(
            "tail exponent defined for integer depth >= 1, got {depth} \
             (the depth-0 tail is temperature dependent)"
        )));
    }
    Ok(5.0 - 3.0 / (depth + 1.0))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariancePoint {
    pub temp: f64,
    pub mean_v: f64,
    pub var_v: f64,
    pub is_delta: bool,
}

/// Mean and variance of the continuous part along a temperature grid.
pub fn variance_curve(
    m: &MomentSummary,
    gamma: f64,
    depth: usize,
    width: usize,
    t_grid: &[f64],
) -> Result<Vec<VariancePoint>> {
    let mut out = Vec::with_capacity(t_grid.len());
    for &temp in t_grid {
        let case = if depth == 1 && width == 1 {
            DensityCase::Depth1
        } else {
            DensityCase::GeneralD { depth, width }
        };
        let density = StationaryDensity::new(case, *m, temp, gamma, 0.0)?;
        if density.is_delta() {
            out.push(VariancePoint { temp, mean_v: 0.0, var_v: 0.0, is_delta: true });
        } else {
            let (mean_v, var_v) = density.moments_of_v()?;
            out.push(VariancePoint { temp, mean_v, var_v, is_delta: false });
        }
    }
    Ok(out)
}

/// Log of the Gibbs reference density `-(L(theta) + gamma ||theta||^2) / T`
/// up to an additive constant, with `L` the mean loss over the dataset
/// (the per-sample loss already carries the weight-decay term).
pub fn gibbs_log_density<M: ScalarModel>(
    model: &M,
    params: &[f64],
    data: &SampleSet,
    temp: f64,
    gamma: f64,
) -> f64 {
    let mean_loss: f64 = data
        .iter()
        .map(|(x, y)| model.loss(params, (x, y), gamma))
        .sum::<f64>()
        / data.len() as f64;
    -mean_loss / temp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::DiagonalNetwork;
    use crate::moments::{gaussian_linear_moments, MomentSummary};
    use approx::assert_relative_eq;

    fn m11() -> MomentSummary {
        gaussian_linear_moments(1.0, 1.0)
    }

    fn interp_moments(k: f64) -> MomentSummary {
        // y = k x with x ~ N(0, 1): Delta = 0 by construction.
        MomentSummary::from_parts(2.0, 2.0 * k, 2.0 * k * k, 1.0, k)
    }

    #[test]
    fn depth0_symmetric_when_uncorrelated() {
        let m = MomentSummary::from_parts(2.0, 0.0, 1.0, 1.0, 0.0);
        for v in [0.3, 1.7, 4.0] {
            let a = log_pdf_depth0(v, &m, 0.1, 0.0).unwrap();
            let b = log_pdf_depth0(-v, &m, 0.1, 0.0).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn depth0_sign_flip_symmetry() {
        // Flipping the sign of (alpha2, beta2) mirrors the density.
        let m = m11();
        let flipped = MomentSummary::from_parts(m.alpha1, -m.alpha2, m.alpha3, m.beta1, -m.beta2);
        for v in [-2.0, 0.4, 1.3] {
            let a = log_pdf_depth0(v, &m, 0.2, 0.0).unwrap();
            let b = log_pdf_depth0(-v, &flipped, 0.2, 0.0).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn depth0_quadratic_factor_exponent() {
        // At k = 1, sigma = 1, T = 0.1: g-exponent -1 - beta1/(2 T alpha1)
        // = -3.5, i.e. a v^-7 tail. Measure the log-log slope far out.
        let m = m11();
        let s = (log_pdf_depth0(1e3, &m, 0.1, 0.0).unwrap()
            - log_pdf_depth0(1e2, &m, 0.1, 0.0).unwrap())
            / (10f64).ln();
        assert_relative_eq!(s, -7.0, max_relative = 1e-2);
    }

    #[test]
    fn depth0_normalizes_at_any_temperature() {
        let m = m11();
        for temp in [0.01, 0.1, 1.0, 10.0] {
            let d = StationaryDensity::new(DensityCase::Depth0, m, temp, 0.0, 0.0).unwrap();
            assert!(matches!(d.norm, NormState::Finite { .. }), "T = {temp}");
            let total = d.mass_between(f64::NEG_INFINITY, f64::INFINITY).unwrap();
            assert_relative_eq!(total, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn depth0_dlog_matches_central_difference() {
        let m = m11();
        for v in [-1.2, 0.1, 0.9, 3.0] {
            let h = 1e-6;
            let num = (log_pdf_depth0(v + h, &m, 0.1, 0.05).unwrap()
                - log_pdf_depth0(v - h, &m, 0.1, 0.05).unwrap())
                / (2.0 * h);
            let ana = dlogp_depth0(v, &m, 0.1, 0.05).unwrap();
            assert_relative_eq!(ana, num, max_relative = 1e-6);
        }
    }

    #[test]
    fn depth1_origin_exponent() {
        // beta2/(2 alpha3 T) - 3/2 = 1/0.6 - 1.5 at k = 1, sigma = 1, T = 0.1.
        let m = m11();
        let q = (log_pdf_depth1(1e-6, &m, 0.1, 0.0).unwrap()
            - log_pdf_depth1(1e-7, &m, 0.1, 0.0).unwrap())
            / (10f64).ln();
        assert_relative_eq!(q, 1.0 / 0.6 - 1.5, max_relative = 1e-4);
    }

    #[test]
    fn depth1_rejects_nonpositive_v() {
        assert!(log_pdf_depth1(0.0, &m11(), 0.1, 0.0).is_err());
        assert!(log_pdf_depth1(-0.5, &m11(), 0.1, 0.0).is_err());
    }

    #[test]
    fn depth1_tail_is_seven_halves() {
        let m = m11();
        for temp in [0.05, 0.3] {
            let s = (log_pdf_depth1(1e3, &m, temp, 0.0).unwrap()
                - log_pdf_depth1(1e2, &m, temp, 0.0).unwrap())
                / (10f64).ln();
            assert_relative_eq!(s, -3.5, max_relative = 1e-2);
        }
    }

    #[test]
    fn depth1_collapse_above_critical_temperature() {
        let m = m11();
        let t_c = m.beta2 / m.alpha3;
        let d = StationaryDensity::new(DensityCase::Depth1, m, t_c, 0.0, 0.0).unwrap();
        assert!(d.is_delta());
        let d = StationaryDensity::new(DensityCase::Depth1, m, 1.1 * t_c, 0.0, 0.0).unwrap();
        assert!(d.is_delta());
        let d = StationaryDensity::new(DensityCase::Depth1, m, 0.9 * t_c, 0.0, 0.0).unwrap();
        assert!(matches!(d.norm, NormState::Finite { .. }));
    }

    #[test]
    fn depth1_mass_respects_atom_weight() {
        let m = m11();
        let d = StationaryDensity::new(DensityCase::Depth1, m, 0.2, 0.0, 0.3).unwrap();
        let total = d.mass_between(0.0, f64::INFINITY).unwrap();
        assert_relative_eq!(total, 0.7, epsilon = 1e-5);
    }

    #[test]
    fn depth1_dlog_matches_central_difference() {
        let m = m11();
        for v in [0.1, 0.7, 2.5] {
            let h = 1e-7;
            let num = (log_pdf_depth1(v + h, &m, 0.1, 0.0).unwrap()
                - log_pdf_depth1(v - h, &m, 0.1, 0.0).unwrap())
                / (2.0 * h);
            let ana = dlogp_depth1(v, &m, 0.1, 0.0).unwrap();
            assert_relative_eq!(ana, num, max_relative = 1e-5);
        }
    }

    #[test]
    fn general_d1_matches_depth1_up_to_constant() {
        let m = m11();
        let (temp, width) = (0.12, 7);
        let offset = log_pdf_general_d(1.0, &m, temp, 0.0, 1, width).unwrap()
            - log_pdf_depth1(1.0, &m, temp, 0.0).unwrap();
        for v in [0.1, 0.4, 1.7, 5.0, 10.0] {
            let a = log_pdf_general_d(v, &m, temp, 0.0, 1, width).unwrap();
            let b = log_pdf_depth1(v, &m, temp, 0.0).unwrap();
            assert_relative_eq!(a - b, offset, epsilon = 1e-6);
        }
    }

    #[test]
    fn general_d_tail_exponents() {
        let m = m11();
        let s = (log_pdf_general_d(1e3, &m, 0.1, 0.0, 2, 2).unwrap()
            - log_pdf_general_d(1e2, &m, 0.1, 0.0, 2, 2).unwrap())
            / (10f64).ln();
        assert_relative_eq!(s, -4.0, max_relative = 1e-2);
        assert_relative_eq!(tail_exponent(1.0).unwrap(), 3.5);
        assert_relative_eq!(tail_exponent(2.0).unwrap(), 4.0);
        assert_relative_eq!(tail_exponent(f64::INFINITY).unwrap(), 5.0);
        assert!(tail_exponent(0.0).is_err());
    }

    #[test]
    fn deep_network_with_matching_width_normalizes() {
        let m = m11();
        let d = StationaryDensity::new(
            DensityCase::GeneralD { depth: 60, width: 60 },
            m,
            0.1,
            0.0,
            0.0,
        )
        .unwrap();
        assert!(matches!(d.norm, NormState::Finite { .. }));
        let total = d.mass_between(0.0, f64::INFINITY).unwrap();
        assert_relative_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn general_d_dlog_matches_central_difference() {
        let m = m11();
        for v in [0.3, 1.0, 3.0] {
            let h = 1e-6;
            let num = (log_pdf_general_d(v + h, &m, 0.1, 0.0, 3, 4).unwrap()
                - log_pdf_general_d(v - h, &m, 0.1, 0.0, 3, 4).unwrap())
                / (2.0 * h);
            let ana = dlogp_general_d(v, &m, 0.1, 0.0, 3, 4).unwrap();
            assert_relative_eq!(ana, num, max_relative = 1e-5);
        }
    }

    #[test]
    fn infinite_d_agrees_with_deep_general_d() {
        // Both log-densities are unnormalized, so compare after removing
        // the best additive constant. The residual finite-depth correction
        // scales like ln(d)/(D T); at T = 2 and D = d = 200 it sits well
        // below the 0.05 agreement target.
        let m = m11();
        let temp = 2.0;
        let (depth, width) = (200, 200);
        let ratio = width as f64 / depth as f64;
        let vs = [0.2, 0.5, 1.0, 1.5, 3.0, 5.0];
        let diffs: Vec<f64> = vs
            .iter()
            .map(|&v| {
                log_pdf_general_d(v, &m, temp, 0.0, depth, width).unwrap()
                    - log_pdf_infinite_d(v, &m, temp, 0.0, ratio).unwrap()
            })
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        for (v, d) in vs.iter().zip(&diffs) {
            assert!((d - mean).abs() < 0.05, "v = {v}: deviation {}", d - mean);
        }
    }

    #[test]
    fn infinite_d_scaling_law() {
        // Halving T together with the ratio d/D leaves the shape unchanged.
        let m = m11();
        let d1 = |v: f64| log_pdf_infinite_d(v, &m, 0.2, 0.0, 1.0).unwrap();
        let d2 = |v: f64| log_pdf_infinite_d(v, &m, 0.1, 0.0, 0.5).unwrap();
        let offset = d1(1.0) - d2(1.0);
        for v in [0.3, 0.8, 2.0, 6.0] {
            assert_relative_eq!(d1(v) - d2(v), offset, epsilon = 1e-9);
        }
    }

    #[test]
    fn infinite_d_vanishing_ratio_collapses() {
        let d = StationaryDensity::new(
            DensityCase::InfiniteD { width_depth_ratio: 0.0 },
            m11(),
            0.1,
            0.0,
            0.0,
        )
        .unwrap();
        assert!(d.is_delta());
        let d = StationaryDensity::new(
            DensityCase::InfiniteD { width_depth_ratio: 1.0 },
            m11(),
            0.1,
            0.0,
            0.0,
        )
        .unwrap();
        assert!(matches!(d.norm, NormState::Finite { .. }));
    }

    #[test]
    fn interpolation_delta_threshold() {
        let m = interp_moments(1.0);
        // Threshold T = beta1 / (alpha1 k) = 0.5.
        let d = StationaryDensity::new(DensityCase::InterpolationD1 { k: 1.0 }, m, 0.6, 0.0, 0.0)
            .unwrap();
        assert!(d.is_delta());
        let d = StationaryDensity::new(DensityCase::InterpolationD1 { k: 1.0 }, m, 0.4, 0.0, 0.0)
            .unwrap();
        assert!(matches!(d.norm, NormState::ConcentratedAtMin { v } if v == 1.0));
    }

    #[test]
    fn delta_zero_c_aligned_criticality() {
        let m = interp_moments(1.0);
        let (k, temp) = (1.0, 0.1);
        let c_crit = m.beta1 - m.alpha1 * k * temp; // 0.8
        let case = |c| DensityCase::DeltaZeroC { k, c, branch: Branch::Aligned };
        let d = StationaryDensity::new(case(c_crit + 0.05), m, temp, 0.0, 0.0).unwrap();
        assert!(d.is_delta());
        let d = StationaryDensity::new(case(c_crit - 0.05), m, temp, 0.0, 0.0).unwrap();
        assert!(matches!(d.norm, NormState::Finite { .. }));
        assert_relative_eq!(d.mass_between(0.0, k).unwrap(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn delta_zero_c_anti_aligned_negative_c_collapses() {
        let m = interp_moments(1.0);
        let case = |c| DensityCase::DeltaZeroC { k: 1.0, c, branch: Branch::AntiAligned };
        let d = StationaryDensity::new(case(-0.5), m, 0.1, 0.0, 0.0).unwrap();
        assert!(d.is_delta());
        // c above beta1 + alpha1 k T = 1.2 is normalizable.
        let d = StationaryDensity::new(case(1.5), m, 0.1, 0.0, 0.0).unwrap();
        assert!(matches!(d.norm, NormState::Finite { .. }));
    }

    #[test]
    fn critical_points_reference_values() {
        let m = m11();
        let cp = critical_points(&m, (0.0, 10.0), 0.0);
        assert_relative_eq!(cp.t_c, 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(cp.t_c_over_3, 1.0 / 9.0, epsilon = 1e-12);
        assert_relative_eq!(cp.t_c_modified, 1.0 / 4.0, epsilon = 1e-12);
        let t_star = cp.t_star.expect("T* exists at k = sigma = 1");
        assert_relative_eq!(t_star, (4.0 + 42f64.sqrt()) / 52.0, epsilon = 1e-12);
        assert!(cp.t_c_over_3 < t_star);
        assert!(!cp.sparse_everywhere);
    }

    #[test]
    fn critical_points_sparse_flag() {
        let m = m11();
        let cp = critical_points(&m, (0.0, 10.0), m.beta2);
        assert!(cp.sparse_everywhere);
        assert_eq!(cp.t_c, 0.0);
    }

    #[test]
    fn mle_reference_values() {
        let m = m11();
        let v = mle_v(&m, 0.01, 0.0).unwrap();
        assert_relative_eq!(v, 0.97211, max_relative = 1e-4);
        // T -> 0 recovers the global minimum beta2/beta1 = 1, with leading
        // slope -3 in T.
        let v0 = mle_v(&m, 1e-7, 0.0).unwrap();
        assert_relative_eq!(v0, 1.0, max_relative = 1e-5);
        // Leading-order bias: v* = beta2/beta1 + (10 a2 b2/b1^2
        // - 7 a1 b2^2/b1^3 - 3 a3/b1) T = 1 - 3T here; measure the slope
        // where the quadratic correction is negligible.
        let slope = (mle_v(&m, 1e-4, 0.0).unwrap() - 1.0) / 1e-4;
        assert_relative_eq!(slope, -3.0, max_relative = 0.01);
    }

    #[test]
    fn mle_is_stationary_point_of_depth1_density() {
        let m = m11();
        for temp in [0.01, 0.05, 0.1] {
            let v = mle_v(&m, temp, 0.0).unwrap();
            let d = dlogp_depth1(v, &m, temp, 0.0).unwrap();
            // Compare against the magnitude of the individual terms.
            let scale = (1.5 / v).abs() + 1.0;
            assert!(d.abs() / scale < 1e-10, "T = {temp}: residual {d}");
        }
    }

    #[test]
    fn regime_reference_points() {
        let m = m11();
        let r = regime_classify(&m, 0.4, 0.0);
        assert_eq!(r.phase, Phase::I);
        assert_eq!(r.max_kind, MaxKind::A);
        let r = regime_classify(&m, 0.05, 0.0);
        assert_eq!(r.phase, Phase::III);
        assert_eq!(r.max_kind, MaxKind::B);
        let r = regime_classify(&m, 0.2, 0.0);
        assert_eq!(r.phase, Phase::II);
    }

    #[test]
    fn variance_decreases_with_temperature() {
        let m = m11();
        let pts = variance_curve(&m, 0.0, 1, 1, &[0.15, 0.3]).unwrap();
        assert!(!pts[0].is_delta && !pts[1].is_delta);
        assert!(
            pts[1].var_v < pts[0].var_v,
            "Var(T=0.3) = {} not below Var(T=0.15) = {}",
            pts[1].var_v,
            pts[0].var_v
        );
        let cold = variance_curve(&m, 0.0, 1, 1, &[1e-3]).unwrap();
        assert_relative_eq!(cold[0].mean_v, 1.0, max_relative = 0.02);
    }

    #[test]
    fn zero_current_for_closed_forms() {
        let m = m11();
        let cases = [
            (DensityCase::Depth0, 0.1),
            (DensityCase::Depth1, 0.1),
            (DensityCase::GeneralD { depth: 2, width: 3 }, 0.08),
        ];
        for (case, temp) in cases {
            let d = StationaryDensity::new(case, m, temp, 0.0, 0.0).unwrap();
            for v in [0.3, 0.8, 1.5] {
                let (j, scale) = fokker_planck_current(&d, v).unwrap();
                assert!(
                    j.abs() <= 1e-5 * scale,
                    "{case:?} at v = {v}: current {j:.3e}, scale {scale:.3e}"
                );
            }
        }
    }

    #[test]
    fn gibbs_density_flat_along_charge_direction() {
        let data = crate::moments::synth_linear_dataset(1.0, 1.0, 200, 1).unwrap();
        let net = DiagonalNetwork::new(1, 1).unwrap();
        // Same product uw, different charges: identical Gibbs density.
        let a = gibbs_log_density(&net, &[2.0, 0.5], &data, 0.1, 0.0);
        let b = gibbs_log_density(&net, &[0.5, 2.0], &data, 0.1, 0.0);
        let c = gibbs_log_density(&net, &[1.0, 1.0], &data, 0.1, 0.0);
        assert_relative_eq!(a, b, epsilon = 1e-12);
        assert_relative_eq!(a, c, epsilon = 1e-12);
        // Weight decay breaks the degeneracy in favour of |u| = |w|.
        let a = gibbs_log_density(&net, &[2.0, 0.5], &data, 0.1, 0.01);
        let c = gibbs_log_density(&net, &[1.0, 1.0], &data, 0.1, 0.01);
        assert!(c > a);
    }

    #[test]
    fn expectation_requires_continuous_part() {
        let m = m11();
        let d = StationaryDensity::new(DensityCase::Depth1, m, 0.5, 0.0, 0.0).unwrap();
        assert!(d.is_delta());
        assert!(d.moments_of_v().is_err());
        assert_eq!(d.pdf(1.0), 0.0);
    }
}
