//! Adaptive Gauss–Kronrod quadrature with helpers for the improper
//! integrals that show up in the stationary densities: algebraic tails at
//! infinity and integrable power singularities at the origin.

use std::collections::BinaryHeap;

use crate::{Error, Result};

// 15-point Kronrod abscissae (positive half) and weights, with the embedded
// 7-point Gauss weights. Standard QUADPACK constants.
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub abs_err: f64,
}

/// One G7/K15 panel on `[a, b]`; returns (kronrod value, error estimate).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let center = 0.5 * (a + b);
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for (j, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let (fl, fr) = (f(center - half * x), f(center + half * x));
        let pair = if j == 7 { f(center) } else { fl + fr };
        kronrod += wk * pair;
        // Odd Kronrod indices are the embedded Gauss points.
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    kronrod *= half;
    gauss *= half;
    let err = (kronrod - gauss).abs();
    // The usual (200*err)^1.5 sharpening overestimates stability for our
    // smooth integrands; the plain difference is a safe bound here.
    (kronrod, err)
}

#[derive(Debug)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.partial_cmp(&other.err).unwrap_or(std::cmp::Ordering::Equal)
    }
}

/// Adaptive quadrature of `f` over the finite interval `[a, b]`.
///
/// Splits the interval with the largest error estimate until the total
/// estimated error drops below `abs_tol + rel_tol * |value|` or the segment
/// budget is exhausted.
pub fn adaptive<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult> {
    const MAX_SEGMENTS: usize = 2000;
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Quadrature("non-finite interval".into()));
    }
    if a == b {
        return Ok(QuadResult { value: 0.0, abs_err: 0.0 });
    }
    let mut heap = BinaryHeap::new();
    let (value, err) = gk15(&f, a, b);
    if !value.is_finite() {
        return Err(Error::Quadrature("integrand produced non-finite values".into()));
    }
    heap.push(Segment { a, b, value, err });
    let mut total_value = value;
    let mut total_err = err;
    while total_err > abs_tol + rel_tol * total_value.abs() {
        if heap.len() >= MAX_SEGMENTS {
            return Err(Error::Quadrature(format!(
                "no convergence after {MAX_SEGMENTS} segments; value ~ {total_value:.6e}, err ~ {total_err:.3e}"
            )));
        }
        let worst = heap.pop().expect("heap cannot be empty here");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval at floating-point resolution; accept its estimate.
            total_err -= worst.err;
            continue;
        }
        let (lv, le) = gk15(&f, worst.a, mid);
        let (rv, re) = gk15(&f, mid, worst.b);
        if !(lv.is_finite() && rv.is_finite()) {
            return Err(Error::Quadrature("integrand produced non-finite values".into()));
        }
        total_value += lv + rv - worst.value;
        total_err += le + re - worst.err;
        heap.push(Segment { a: worst.a, b: mid, value: lv, err: le });
        heap.push(Segment { a: mid, b: worst.b, value: rv, err: re });
    }
    Ok(QuadResult { value: total_value, abs_err: total_err })
}

/// `int_a^inf f`, assuming `f` decays algebraically like `v^-p` with `p > 1`.
/// Uses the substitution `v = 1/t` to map the tail onto `(0, 1/a]`.
pub fn integrate_algebraic_tail<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult> {
    if a <= 0.0 {
        return Err(Error::Quadrature("tail integration needs a > 0".into()));
    }
    adaptive(|t| f(1.0 / t) / (t * t), 0.0, 1.0 / a, rel_tol, abs_tol)
}

/// `int_0^b f` where `f(v) ~ v^q * (smooth)` near the origin with known
/// exponent `q > -1`. The substitution `v = t^m` with `m = 2/(1+q)` makes
/// the transformed integrand vanish linearly at 0.
pub fn integrate_power_singularity<F: Fn(f64) -> f64>(
    f: F,
    b: f64,
    origin_exponent: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult> {
    if origin_exponent <= -1.0 {
        return Err(Error::Quadrature(format!(
            "origin exponent {origin_exponent} is not integrable"
        )));
    }
    let m = 2.0 / (1.0 + origin_exponent);
    if !(1e-6..=1e6).contains(&m) {
        return adaptive(f, 0.0, b, rel_tol, abs_tol);
    }
    let t_max = b.powf(1.0 / m);
    adaptive(
        |t| {
            if t <= 0.0 {
                0.0
            } else {
                m * t.powf(m - 1.0) * f(t.powf(m))
            }
        },
        0.0,
        t_max,
        rel_tol,
        abs_tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_is_exact() {
        let q = adaptive(|x| 3.0 * x * x, 0.0, 2.0, 1e-12, 0.0).unwrap();
        assert_relative_eq!(q.value, 8.0, max_relative = 1e-12);
    }

    #[test]
    fn gaussian_integral() {
        let q = adaptive(|x| (-x * x).exp(), -20.0, 20.0, 1e-12, 0.0).unwrap();
        assert_relative_eq!(q.value, PI.sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn oscillatory_integrand() {
        let q = adaptive(|x| (50.0 * x).sin(), 0.0, 1.0, 1e-10, 1e-14).unwrap();
        assert_relative_eq!(q.value, (1.0 - (50.0f64).cos()) / 50.0, epsilon = 1e-9);
    }

    #[test]
    fn algebraic_tail() {
        // int_1^inf v^-3 dv = 1/2
        let q = integrate_algebraic_tail(|v| v.powi(-3), 1.0, 1e-10, 0.0).unwrap();
        assert_relative_eq!(q.value, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn origin_power_singularity() {
        // int_0^1 v^-1/2 dv = 2
        let q = integrate_power_singularity(|v| v.powf(-0.5), 1.0, -0.5, 1e-10, 0.0).unwrap();
        assert_relative_eq!(q.value, 2.0, max_relative = 1e-9);
    }

    #[test]
    fn non_integrable_singularity_is_rejected() {
        assert!(integrate_power_singularity(|v| 1.0 / v, 1.0, -1.0, 1e-8, 0.0).is_err());
    }
}
