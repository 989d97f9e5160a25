//! Analytic two-cluster block model.
//!
//! The idealized Gram matrix has unit diagonal, `γ²` inside the first
//! cluster, `γ′²` inside the second and `βγγ′` across. By symmetry the
//! SOSREP fixed point takes one value `a` of `f` on the first cluster and
//! one value `b` on the second, which reduces the fixed-point equations to
//!
//! ```text
//! a = H11/a + H12/b
//! b = H21/a + H22/b
//! ```
//!
//! With `u = 1/a` and `s = u²` this becomes a quadratic in `s`. The density
//! ratio between the clusters is `a²/b²`.

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{fit, SolverOptions};

/// Cluster sizes and kernel levels of the block model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub n: usize,
    pub m: usize,
    pub gamma: f64,
    pub gamma_prime: f64,
    pub beta: f64,
}

impl BlockSpec {
    pub fn new(n: usize, m: usize, gamma: f64, gamma_prime: f64, beta: f64) -> Result<Self> {
        let spec = Self {
            n,
            m,
            gamma,
            gamma_prime,
            beta,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidParameter("cluster sizes must be positive".into()));
        }
        if !(0.0 < self.gamma_prime && self.gamma_prime <= self.gamma && self.gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < gamma' <= gamma <= 1, got gamma = {}, gamma' = {}",
                self.gamma, self.gamma_prime
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        Ok(())
    }

    fn cross(&self) -> f64 {
        self.beta * self.gamma * self.gamma_prime
    }

    fn require_equal_sizes(&self) -> Result<()> {
        if self.n != self.m {
            return Err(Error::InvalidParameter(format!(
                "equal cluster sizes required, got {} and {}",
                self.n, self.m
            )));
        }
        Ok(())
    }

    /// Coefficients of the large-cluster system (diagonal terms dropped).
    pub fn approximate_system(&self) -> [f64; 4] {
        let (n, m) = (self.n as f64, self.m as f64);
        [
            n * self.gamma * self.gamma,
            m * self.cross(),
            n * self.cross(),
            m * self.gamma_prime * self.gamma_prime,
        ]
    }

    /// Coefficients of the exact finite-size system.
    pub fn exact_system(&self) -> [f64; 4] {
        let (n, m) = (self.n as f64, self.m as f64);
        [
            1.0 + (n - 1.0) * self.gamma * self.gamma,
            m * self.cross(),
            n * self.cross(),
            1.0 + (m - 1.0) * self.gamma_prime * self.gamma_prime,
        ]
    }
}

/// The `(N+M) × (N+M)` block Gram matrix.
pub fn build_block_kernel(spec: &BlockSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let (n, m) = (spec.n, spec.m);
    let mut k = Array2::from_elem((n + m, n + m), spec.cross());
    k.slice_mut(s![..n, ..n]).fill(spec.gamma * spec.gamma);
    k.slice_mut(s![n.., n..]).fill(spec.gamma_prime * spec.gamma_prime);
    k.diag_mut().fill(1.0);
    Ok(k)
}

/// Large-cluster KDE density ratio `(γ² + βγγ′)/(γ′² + βγγ′)` for `N = M`.
pub fn kde_ratio(spec: &BlockSpec) -> Result<f64> {
    spec.validate()?;
    spec.require_equal_sizes()?;
    let c = spec.cross();
    Ok((spec.gamma * spec.gamma + c) / (spec.gamma_prime * spec.gamma_prime + c))
}

/// KDE density ratio with the exact finite-size sums.
pub fn kde_ratio_exact(spec: &BlockSpec) -> Result<f64> {
    spec.validate()?;
    let [h11, h12, h21, h22] = spec.exact_system();
    Ok((h11 + h12) / (h21 + h22))
}

/// One positive solution of the two-variable system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSolution {
    pub a: f64,
    pub b: f64,
    /// Max absolute residual of the two equations.
    pub residual: f64,
}

impl BlockSolution {
    pub fn ratio(&self) -> f64 {
        (self.a * self.a) / (self.b * self.b)
    }
}

/// Solutions of the two-variable system with the closed-form ratios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoBlockSolution {
    pub h: [f64; 4],
    pub solutions: Vec<BlockSolution>,
    /// Closed-form `a²/b²` for sign `+1` and `−1`.
    pub closed_form: [Option<f64>; 2],
    /// Sign whose closed form is realized by a positive solution.
    pub selected_sign: Option<i8>,
}

impl TwoBlockSolution {
    /// `a²/b²` of the first positive solution.
    pub fn ratio(&self) -> f64 {
        self.solutions[0].ratio()
    }
}

fn residual(h: &[f64; 4], a: f64, b: f64) -> f64 {
    let [h11, h12, h21, h22] = *h;
    (a - h11 / a - h12 / b)
        .abs()
        .max((b - h21 / a - h22 / b).abs())
}

fn newton(h: &[f64; 4], mut a: f64, mut b: f64) -> (f64, f64) {
    let [h11, h12, h21, h22] = *h;
    for _ in 0..100 {
        let f1 = a - h11 / a - h12 / b;
        let f2 = b - h21 / a - h22 / b;
        let j11 = 1.0 + h11 / (a * a);
        let j12 = h12 / (b * b);
        let j21 = h21 / (a * a);
        let j22 = 1.0 + h22 / (b * b);
        let det = j11 * j22 - j12 * j21;
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let da = (f1 * j22 - f2 * j12) / det;
        let db = (j11 * f2 - j21 * f1) / det;
        let (na, nb) = (a - da, b - db);
        if !(na > 0.0 && nb > 0.0) {
            break;
        }
        let done = da.abs() <= 1e-16 * na && db.abs() <= 1e-16 * nb;
        a = na;
        b = nb;
        if done {
            break;
        }
    }
    (a, b)
}

fn damped_fixed_point(h: &[f64; 4]) -> (f64, f64) {
    let [h11, h12, h21, h22] = *h;
    let (mut a, mut b) = (1.0f64, 1.0f64);
    for _ in 0..100_000 {
        let na = 0.5 * (a + h11 / a + h12 / b);
        let nb = 0.5 * (b + h21 / a + h22 / b);
        let step = (na - a).abs().max((nb - b).abs());
        a = na;
        b = nb;
        if step <= 1e-15 * a.max(b) {
            break;
        }
    }
    (a, b)
}

/// `s = u²` from the closed-form root for sign `rho`.
fn closed_form_s(h: &[f64; 4], rho: f64) -> f64 {
    let [h11, h12, h21, h22] = *h;
    let disc = ((h21 - h12).powi(2) + 4.0 * h11 * h22).sqrt();
    let num = -(h12 * (h21 - h12) - 2.0 * h11 * h22) + rho * h12 * disc;
    let den = 2.0 * h11 * (h11 * h22 - h12 * h21);
    if den == 0.0 {
        // The quadratic degenerates to a linear equation.
        return h22 / (2.0 * h11 * h22 + h12 * h12 - h12 * h21);
    }
    num / den
}

/// Closed-form `a²/b²` for sign `rho`.
fn closed_form_ratio(h: &[f64; 4], rho: f64) -> Option<f64> {
    let [h11, h12, h21, h22] = *h;
    let disc = ((h21 - h12).powi(2) + 4.0 * h11 * h22).sqrt();
    let num = -(h21 + h12) - rho * disc;
    let den = 2.0 * h11 * h22 + h12 * (-(h21 - h12) + rho * disc);
    let r = h11 * h11 * (num / den).powi(2);
    r.is_finite().then_some(r)
}

/// Positive solutions of `a = H11/a + H12/b`, `b = H21/a + H22/b`.
///
/// A damped fixed-point iteration from `a = b = 1` and the positive roots
/// of the quadratic in `s` are each polished by Newton's method; solutions
/// with residual above `1e-8` (relative) are discarded.
pub fn solve_two_block(h11: f64, h12: f64, h21: f64, h22: f64) -> Result<TwoBlockSolution> {
    let h = [h11, h12, h21, h22];
    if !(h11 > 0.0 && h22 > 0.0 && h12 >= 0.0 && h21 >= 0.0) || h.iter().any(|v| !v.is_finite())
    {
        return Err(Error::InvalidParameter(format!(
            "system coefficients must be finite with H11, H22 > 0 and H12, H21 >= 0, got {h:?}"
        )));
    }
    let accept = |a: f64, b: f64| -> Option<BlockSolution> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return None;
        }
        let r = residual(&h, a, b);
        (r <= 1e-8 * a.max(b).max(1.0)).then_some(BlockSolution { a, b, residual: r })
    };

    let mut starts = vec![damped_fixed_point(&h)];
    let mut sign_hits = [false; 2];
    for (k, rho) in [1.0, -1.0].into_iter().enumerate() {
        if h12 == 0.0 {
            continue;
        }
        let s = closed_form_s(&h, rho);
        if !(s > 0.0 && s.is_finite()) {
            continue;
        }
        let u = s.sqrt();
        let v = (1.0 - h11 * s) / (h12 * u);
        if v > 0.0 {
            let (a, b) = (1.0 / u, 1.0 / v);
            if accept(a, b).is_some() {
                sign_hits[k] = true;
            }
            starts.push((a, b));
        }
    }

    let mut solutions: Vec<BlockSolution> = Vec::new();
    for (a0, b0) in starts {
        let (a, b) = newton(&h, a0, b0);
        if let Some(sol) = accept(a, b) {
            let dup = solutions.iter().any(|o| {
                (o.a - sol.a).abs() <= 1e-9 * sol.a && (o.b - sol.b).abs() <= 1e-9 * sol.b
            });
            if !dup {
                solutions.push(sol);
            }
        }
    }
    if solutions.is_empty() {
        let (a, b) = damped_fixed_point(&h);
        return Err(Error::NoPositiveSolution {
            residual: residual(&h, a, b),
        });
    }

    let closed_form = [closed_form_ratio(&h, 1.0), closed_form_ratio(&h, -1.0)];
    let selected_sign = if h12 > 0.0 {
        if sign_hits[0] {
            Some(1)
        } else if sign_hits[1] {
            Some(-1)
        } else {
            None
        }
    } else {
        // Without cross terms the substitution in `s` is unavailable; pick
        // the sign whose ratio the positive solution realizes.
        let target = solutions[0].ratio();
        [1i8, -1]
            .into_iter()
            .zip(closed_form)
            .find(|(_, r)| r.is_some_and(|r| (r - target).abs() <= 1e-8 * target))
            .map(|(s, _)| s)
    };
    Ok(TwoBlockSolution {
        h,
        solutions,
        closed_form,
        selected_sign,
    })
}

/// SOSREP density ratio of the large-cluster system for `N = M`.
pub fn sosrep_block_ratio(spec: &BlockSpec) -> Result<f64> {
    spec.validate()?;
    spec.require_equal_sizes()?;
    let [h11, h12, h21, h22] = spec.approximate_system();
    Ok(solve_two_block(h11, h12, h21, h22)?.ratio())
}

/// Comparison of the fitted block-kernel density ratio with the oracles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoBlockReport {
    pub spec: BlockSpec,
    /// `γ²/γ′²`.
    pub asymptotic_ratio: f64,
    pub kde_ratio: Option<f64>,
    pub kde_ratio_exact: f64,
    /// Ratio of the large-cluster system (equal sizes only).
    pub sosrep_ratio: Option<f64>,
    pub closed_form_ratios: [Option<f64>; 2],
    pub selected_sign: Option<i8>,
    /// Positive solution of the exact finite-size system.
    pub exact_solution: BlockSolution,
    pub exact_ratio: f64,
    /// Ratio of the fitted pre-density between the clusters.
    pub solver_ratio: f64,
    /// `solver_ratio / exact_ratio − 1`.
    pub solver_vs_exact: f64,
    /// `solver_ratio / asymptotic_ratio − 1`.
    pub solver_vs_asymptotic: f64,
    /// `exact_ratio / asymptotic_ratio − 1`, the finite-size correction.
    pub finite_size_correction: f64,
    /// Largest spread of the fitted coefficients within one cluster.
    pub intra_cluster_spread: f64,
    pub solver_iterations: usize,
    pub solver_converged: bool,
    pub rkhs_norm_sq: f64,
}

/// Fits the block kernel with the gradient solver and compares the cluster
/// density ratio against the exact finite-size system.
pub fn verify_against_solver(spec: &BlockSpec, opts: &SolverOptions) -> Result<TwoBlockReport> {
    spec.validate()?;
    let k = build_block_kernel(spec)?;
    let outcome = fit(k.view(), opts)?;
    let f: Array1<f64> = k.dot(&outcome.alpha);
    let n = spec.n;
    let (f1, f2) = (f[0], f[n]);
    let solver_ratio = (f1 * f1) / (f2 * f2);

    let spread = |x: ndarray::ArrayView1<f64>| {
        let (lo, hi) = x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        hi - lo
    };
    let intra = spread(outcome.alpha.slice(s![..n])).max(spread(outcome.alpha.slice(s![n..])));

    let [h11, h12, h21, h22] = spec.exact_system();
    let exact = solve_two_block(h11, h12, h21, h22)?;
    let exact_ratio = exact.ratio();
    let equal = spec.n == spec.m;
    let approx = if equal {
        let [a11, a12, a21, a22] = spec.approximate_system();
        Some(solve_two_block(a11, a12, a21, a22)?)
    } else {
        None
    };
    let asymptotic = (spec.gamma * spec.gamma) / (spec.gamma_prime * spec.gamma_prime);

    Ok(TwoBlockReport {
        spec: *spec,
        asymptotic_ratio: asymptotic,
        kde_ratio: if equal { Some(kde_ratio(spec)?) } else { None },
        kde_ratio_exact: kde_ratio_exact(spec)?,
        sosrep_ratio: approx.as_ref().map(|s| s.ratio()),
        closed_form_ratios: approx.as_ref().map_or(exact.closed_form, |s| s.closed_form),
        selected_sign: approx.as_ref().map_or(exact.selected_sign, |s| s.selected_sign),
        exact_solution: exact.solutions[0],
        exact_ratio,
        solver_ratio,
        solver_vs_exact: solver_ratio / exact_ratio - 1.0,
        solver_vs_asymptotic: solver_ratio / asymptotic - 1.0,
        finite_size_correction: exact_ratio / asymptotic - 1.0,
        intra_cluster_spread: intra,
        solver_iterations: outcome.iterations,
        solver_converged: outcome.converged,
        rkhs_norm_sq: outcome.rkhs_norm_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn all_ones_kernel() {
        let k = build_block_kernel(&BlockSpec::new(2, 3, 1.0, 1.0, 1.0).unwrap()).unwrap();
        assert!(k.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn singleton_clusters() {
        let spec = BlockSpec::new(1, 1, 0.8, 0.2, 0.5).unwrap();
        let k = build_block_kernel(&spec).unwrap();
        let c = 0.5 * 0.8 * 0.2;
        assert_eq!(k, ndarray::array![[1.0, c], [c, 1.0]]);
    }

    #[test]
    fn block_layout_and_symmetry() {
        let spec = BlockSpec::new(3, 2, 0.8, 0.2, 0.5).unwrap();
        let k = build_block_kernel(&spec).unwrap();
        assert_eq!(k, k.t());
        assert_relative_eq!(k[[0, 1]], 0.64);
        assert_relative_eq!(k[[3, 4]], 0.04, epsilon = 1e-15);
        assert_relative_eq!(k[[0, 4]], 0.08, epsilon = 1e-15);
    }

    #[test]
    fn invalid_specs() {
        assert!(BlockSpec::new(0, 1, 0.5, 0.5, 0.5).is_err());
        assert!(BlockSpec::new(1, 1, 0.2, 0.5, 0.5).is_err());
        assert!(BlockSpec::new(1, 1, 0.5, 0.5, 1.5).is_err());
    }

    #[test]
    fn kde_ratio_examples() {
        let spec = BlockSpec::new(10, 10, 0.8, 0.2, 0.5).unwrap();
        assert_relative_eq!(kde_ratio(&spec).unwrap(), 6.0, epsilon = 1e-12);
        let spec = BlockSpec::new(10, 10, 0.8, 0.2, 0.0).unwrap();
        assert_relative_eq!(kde_ratio(&spec).unwrap(), 16.0, epsilon = 1e-12);
        let spec = BlockSpec::new(10, 10, 0.4, 0.4, 0.3).unwrap();
        assert_eq!(kde_ratio(&spec).unwrap(), 1.0);
        assert!(kde_ratio(&BlockSpec::new(10, 11, 0.8, 0.2, 0.5).unwrap()).is_err());
    }

    #[test]
    fn decoupled_system() {
        let sol = solve_two_block(1.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(sol.solutions.len(), 1);
        assert_relative_eq!(sol.solutions[0].a, 1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.solutions[0].b, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_system_has_equal_values() {
        let sol = solve_two_block(2.0, 0.7, 0.7, 2.0).unwrap();
        let s = sol.solutions[0];
        assert_relative_eq!(s.a, s.b, epsilon = 1e-12);
        assert_relative_eq!(s.ratio(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_matches_numeric() {
        let (g, gp, b) = (0.8, 0.2, 0.5);
        let sol = solve_two_block(g * g, b * g * gp, b * g * gp, gp * gp).unwrap();
        assert_relative_eq!(sol.ratio(), 16.0, epsilon = 1e-9);
        let sign = sol.selected_sign.unwrap();
        let idx = if sign == 1 { 0 } else { 1 };
        assert_relative_eq!(sol.closed_form[idx].unwrap(), sol.ratio(), epsilon = 1e-8);
    }

    #[test]
    fn asymmetric_system_closed_form() {
        let h = [3.0, 0.4, 1.1, 0.5];
        let sol = solve_two_block(h[0], h[1], h[2], h[3]).unwrap();
        let s = sol.solutions[0];
        assert!(s.residual <= 1e-10);
        let idx = if sol.selected_sign.unwrap() == 1 { 0 } else { 1 };
        assert_relative_eq!(sol.closed_form[idx].unwrap(), s.ratio(), max_relative = 1e-8);
    }

    #[test]
    fn sosrep_ratio_is_beta_independent() {
        for beta in [0.0, 0.25, 0.5, 0.9] {
            let spec = BlockSpec::new(50, 50, 0.8, 0.2, beta).unwrap();
            assert!((sosrep_block_ratio(&spec).unwrap() - 16.0).abs() <= 1e-6);
        }
        let spec = BlockSpec::new(50, 50, 0.8, 0.2, 0.0).unwrap();
        assert_relative_eq!(
            sosrep_block_ratio(&spec).unwrap(),
            kde_ratio(&spec).unwrap(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn finite_size_ratio_approaches_asymptote() {
        let mut last = 0.0;
        for n in [10, 100, 1000, 10_000] {
            let spec = BlockSpec::new(n, n, 0.8, 0.2, 0.5).unwrap();
            let [a, b, c, d] = spec.exact_system();
            let r = solve_two_block(a, b, c, d).unwrap().ratio();
            assert!(r > last && r < 16.0);
            last = r;
        }
        assert!((last - 16.0).abs() < 0.05);
    }
}
