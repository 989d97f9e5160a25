//! Exact one-dimensional SDO kernel by adaptive quadrature.
//!
//! With `ω = 2πz` the kernel becomes
//! `k^a(x, y) = (1/π) ∫_0^∞ cos(ω Δ) / (1 + a ω^{2m}) dω`, `Δ = y − x`.
//! For `Δ = 0` the half-line is mapped onto `[0, 1)`; otherwise the integral
//! is split at the zeros of the cosine and the alternating series of
//! half-period integrals is summed with Wynn's ε-algorithm.

use std::f64::consts::PI;

use super::SdoParams;
use crate::error::{Error, Result};

// Kronrod 15-point nodes and weights with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const ROUNDOFF: f64 = 64.0 * f64::EPSILON;

/// Value and error estimate of a quadrature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureResult {
    pub value: f64,
    pub error: f64,
}

fn gk15(f: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature by recursive bisection.
pub fn adaptive_gauss_kronrod(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<QuadratureResult> {
    fn recurse(
        f: &impl Fn(f64) -> f64,
        lo: f64,
        hi: f64,
        tol: f64,
        whole: (f64, f64),
        depth: usize,
    ) -> (f64, f64, bool) {
        let (value, err) = whole;
        // Halving the tolerance eventually drops below round-off of the piece.
        let met = err <= tol || err <= ROUNDOFF * value.abs();
        if met || depth == 0 {
            return (value, err, met);
        }
        let mid = 0.5 * (lo + hi);
        let left = gk15(f, lo, mid);
        let right = gk15(f, mid, hi);
        let (lv, le, lok) = recurse(f, lo, mid, 0.5 * tol, left, depth - 1);
        let (rv, re, rok) = recurse(f, mid, hi, 0.5 * tol, right, depth - 1);
        (lv + rv, le + re, lok && rok)
    }
    let whole = gk15(&f, lo, hi);
    let (value, error, ok) = recurse(&f, lo, hi, tol, whole, 40);
    if !ok || !value.is_finite() {
        return Err(Error::QuadratureNonConvergence {
            estimate: value,
            error_estimate: error,
        });
    }
    Ok(QuadratureResult { value, error })
}

/// Wynn ε-algorithm applied to a sequence of partial sums; returns the
/// latest even-column estimate.
fn wynn_epsilon(sums: &[f64]) -> f64 {
    let n = sums.len();
    let mut prev = vec![0.0; n + 1];
    let mut cur: Vec<f64> = sums.to_vec();
    let mut best = *sums.last().expect("nonempty");
    let mut k = 0;
    while cur.len() > 1 {
        let next: Vec<f64> = (0..cur.len() - 1)
            .map(|i| {
                let diff = cur[i + 1] - cur[i];
                if diff == 0.0 {
                    f64::INFINITY
                } else {
                    prev[i + 1] + 1.0 / diff
                }
            })
            .collect();
        k += 1;
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        if k % 2 == 0 {
            best = *next.last().expect("nonempty");
        }
        prev = cur;
        cur = next;
    }
    best
}

/// Closed form of the `m = 1`, `d = 1` kernel: `(1/(2√a)) e^{−|x−y|/√a}`.
pub fn laplace_kernel_1d(x: f64, y: f64, a: f64) -> f64 {
    let s = a.sqrt();
    (-(x - y).abs() / s).exp() / (2.0 * s)
}

/// Exact one-dimensional SDO kernel `k^a(x, y)` by quadrature of its
/// Fourier integral.
pub fn numeric_kernel_1d(x: f64, y: f64, params: &SdoParams) -> Result<f64> {
    if params.d() != 1 {
        return Err(Error::InvalidParameter(format!(
            "numeric kernel is one-dimensional, got d = {}",
            params.d()
        )));
    }
    let a = params.a();
    let m2 = 2 * params.m() as i32;
    let weight = move |w: f64| 1.0 / (1.0 + a * w.powi(m2));
    let delta = (y - x).abs();
    let rel_tol = 1e-12;

    if delta == 0.0 {
        let mapped = |t: f64| {
            let s = 1.0 - t;
            weight(t / s) / (s * s)
        };
        let r = adaptive_gauss_kronrod(mapped, 0.0, 1.0, rel_tol)?;
        return Ok(r.value / PI);
    }

    let period = PI / delta;
    let integrand = move |w: f64| (w * delta).cos() * weight(w);
    let mut sums: Vec<f64> = Vec::new();
    let mut total = 0.0;
    let mut last_estimate = f64::NAN;
    let mut stable = 0;
    for k in 0..4000 {
        let lo = k as f64 * period;
        let piece = adaptive_gauss_kronrod(integrand, lo, lo + period, 1e-15)?;
        total += piece.value;
        sums.push(total);
        if sums.len() >= 8 {
            let window = &sums[sums.len().saturating_sub(24)..];
            let estimate = wynn_epsilon(window);
            let scale = estimate.abs().max(1e-300);
            if (estimate - last_estimate).abs() <= rel_tol * scale {
                stable += 1;
                if stable >= 3 {
                    return Ok(estimate / PI);
                }
            } else {
                stable = 0;
            }
            last_estimate = estimate;
        }
    }
    Err(Error::QuadratureNonConvergence {
        estimate: last_estimate / PI,
        error_estimate: (total - last_estimate).abs() / PI,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_kronrod_polynomial_and_smooth() {
        let r = adaptive_gauss_kronrod(|x| x * x * x, 0.0, 2.0, 1e-14).unwrap();
        assert!((r.value - 4.0).abs() < 1e-13);
        let r = adaptive_gauss_kronrod(f64::sin, 0.0, PI, 1e-14).unwrap();
        assert!((r.value - 2.0).abs() < 1e-13);
    }

    #[test]
    fn diagonal_value() {
        let p = SdoParams::new(1.0, 1, 1).unwrap();
        let k = numeric_kernel_1d(0.3, 0.3, &p).unwrap();
        assert!((k - 0.5).abs() < 1e-10, "{k}");
    }

    #[test]
    fn matches_closed_form_off_diagonal() {
        let p = SdoParams::new(0.04, 1, 1).unwrap();
        let k = numeric_kernel_1d(0.0, 0.2, &p).unwrap();
        let exact = 2.5 * (-1.0f64).exp();
        assert!((k - exact).abs() < 1e-9, "{k} vs {exact}");
        assert!((k - 0.9197).abs() < 1e-4);
    }

    #[test]
    fn symmetric_in_arguments() {
        let p = SdoParams::new(0.3, 2, 1).unwrap();
        let a = numeric_kernel_1d(0.1, 0.9, &p).unwrap();
        let b = numeric_kernel_1d(0.9, 0.1, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn higher_order_diagonal_matches_beta_integral() {
        // ∫_0^∞ dω / (1 + a ω^{2m}) = a^{-1/(2m)} (π/(2m)) / sin(π/(2m))
        let (a, m) = (0.5_f64, 2u32);
        let p = SdoParams::new(a, m, 1).unwrap();
        let k = numeric_kernel_1d(0.0, 0.0, &p).unwrap();
        let t = PI / (2.0 * m as f64);
        let exact = a.powf(-1.0 / (2.0 * m as f64)) * t / t.sin() / PI;
        assert!((k - exact).abs() < 1e-10);
    }

    #[test]
    fn rejects_multidimensional() {
        let p = SdoParams::new(0.3, 2, 2).unwrap();
        assert!(numeric_kernel_1d(0.0, 1.0, &p).is_err());
    }
}
