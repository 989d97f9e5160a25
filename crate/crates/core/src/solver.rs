//! Gradient iterations for the regularized log-likelihood
//!
//! ```text
//! L(α) = −(1/N) Σ_i log((Kα)_i²) + αᵀKα
//! ```
//!
//! over coefficient vectors of the representer form `f = Σ_i α_i k(x_i, ·)`.
//! The standard gradient is `2[Kα − (1/N) K (Kα)^{-1}]`; the natural
//! gradient, taken in the RKHS inner product, drops the leading `K`:
//! `2[α − (1/N) (Kα)^{-1}]`. Any stationary point satisfies `αᵀKα = 1`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

const ZERO_DENSITY: f64 = 1e-300;
const CLAMP_BELOW: f64 = 1e-12;
const CLAMP_VALUE: f64 = 1e12;
const MAX_INIT_DRAWS: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    #[default]
    Natural,
    Standard,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `α_i = |g_i|` with `g` standard normal.
    #[default]
    AbsGaussian,
    User(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub method: GradientMethod,
    pub lr: f64,
    pub n_iters: usize,
    pub seed: u64,
    pub init: Init,
    pub grad_tol: f64,
    /// Keep the objective value of every iterate.
    #[serde(default)]
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: GradientMethod::Natural,
            lr: 0.1,
            n_iters: 1000,
            seed: 0,
            init: Init::AbsGaussian,
            grad_tol: 1e-8,
            record_trace: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.n_iters == 0 {
            return Err(Error::InvalidParameter("n_iters must be positive".into()));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grad_tol must be nonnegative, got {}",
                self.grad_tol
            )));
        }
        Ok(())
    }
}

/// Result of [`fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub alpha: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    /// Sup-norm of the chosen gradient at the returned iterate.
    pub grad_norm: f64,
    pub rkhs_norm_sq: f64,
    /// Iterations in which a near-zero `(Kα)_i` had its inverse clamped.
    pub clamp_warnings: usize,
    /// Extra initialization draws needed to avoid an exact zero of `Kα`.
    pub init_redraws: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

fn check_square(k: &ArrayView2<f64>, alpha: &ArrayView1<f64>) -> Result<()> {
    if k.nrows() != k.ncols() {
        return Err(Error::DimensionMismatch {
            expected: k.nrows(),
            got: k.ncols(),
        });
    }
    if alpha.len() != k.nrows() {
        return Err(Error::DimensionMismatch {
            expected: k.nrows(),
            got: alpha.len(),
        });
    }
    if k.nrows() == 0 {
        return Err(Error::EmptyInput("kernel matrix"));
    }
    Ok(())
}

fn objective_from(alpha: ArrayView1<f64>, f: ArrayView1<f64>) -> Result<f64> {
    let n = f.len() as f64;
    let mut log_sum = 0.0;
    for (i, &v) in f.iter().enumerate() {
        if v.abs() < ZERO_DENSITY {
            return Err(Error::ZeroDensity { index: i });
        }
        log_sum += (v * v).ln();
    }
    Ok(-log_sum / n + alpha.dot(&f))
}

/// `−(1/N) Σ log((Kα)_i²) + αᵀKα`.
pub fn objective(alpha: ArrayView1<f64>, k: ArrayView2<f64>) -> Result<f64> {
    check_square(&k, &alpha)?;
    let f = k.dot(&alpha);
    objective_from(alpha, f.view())
}

fn inverse_checked(f: &Array1<f64>) -> Result<Array1<f64>> {
    if let Some(i) = f.iter().position(|v| v.abs() < ZERO_DENSITY) {
        return Err(Error::ZeroDensity { index: i });
    }
    Ok(f.mapv(f64::recip))
}

/// `2[α − (1/N)(Kα)^{-1}]`.
pub fn grad_natural(alpha: ArrayView1<f64>, k: ArrayView2<f64>) -> Result<Array1<f64>> {
    check_square(&k, &alpha)?;
    let inv = inverse_checked(&k.dot(&alpha))?;
    let n = alpha.len() as f64;
    Ok(Zip::from(&alpha).and(&inv).map_collect(|&a, &v| 2.0 * (a - v / n)))
}

/// `2[Kα − (1/N) K (Kα)^{-1}]`.
pub fn grad_standard(alpha: ArrayView1<f64>, k: ArrayView2<f64>) -> Result<Array1<f64>> {
    check_square(&k, &alpha)?;
    let f = k.dot(&alpha);
    let inv = inverse_checked(&f)?;
    let n = alpha.len() as f64;
    let k_inv = k.dot(&inv);
    Ok(Zip::from(&f).and(&k_inv).map_collect(|&a, &v| 2.0 * (a - v / n)))
}

/// `αᵀKα`.
pub fn rkhs_norm_sq(alpha: ArrayView1<f64>, k: ArrayView2<f64>) -> f64 {
    alpha.dot(&k.dot(&alpha))
}

/// Adds `1e-10 · trace/N` to the diagonal.
pub fn add_jitter(k: &mut Array2<f64>) {
    let n = k.nrows();
    if n == 0 {
        return;
    }
    let eps = 1e-10 * k.diag().sum() / n as f64;
    k.diag_mut().mapv_inplace(|v| v + eps);
}

fn abs_gaussian(seed: u64, attempt: usize, n: usize) -> Array1<f64> {
    let mut rng = rng_for(seed, &[stream::INIT, attempt as u64]);
    Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal).abs()))
}

/// Initial coefficients; abs-Gaussian draws are repeated under fresh
/// sub-seeds while `Kα` has an exact zero.
pub fn initial_alpha(k: ArrayView2<f64>, opts: &SolverOptions) -> Result<(Array1<f64>, usize)> {
    let n = k.nrows();
    match &opts.init {
        Init::User(v) => {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
            Ok((Array1::from(v.clone()), 0))
        }
        Init::AbsGaussian => {
            for attempt in 0..MAX_INIT_DRAWS {
                let alpha = abs_gaussian(opts.seed, attempt, n);
                if k.dot(&alpha).iter().all(|&v| v != 0.0) {
                    return Ok((alpha, attempt));
                }
            }
            Err(Error::DegenerateInitialization {
                attempts: MAX_INIT_DRAWS,
            })
        }
    }
}

/// Runs the chosen gradient iteration on the kernel matrix `k`.
///
/// Stops after `n_iters` updates or once the sup-norm of the chosen
/// gradient drops below `grad_tol`. Inverses of `|(Kα)_i| < 1e-12` are
/// clamped to `±1e12`; each iteration where that happens counts one warning.
pub fn fit(k: ArrayView2<f64>, opts: &SolverOptions) -> Result<FitOutcome> {
    opts.validate()?;
    let n = k.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("kernel matrix"));
    }
    let (mut alpha, init_redraws) = initial_alpha(k, opts)?;
    check_square(&k, &alpha.view())?;
    let nf = n as f64;
    let mut trace = Vec::new();
    let mut clamp_warnings = 0;
    let mut iterations = 0;
    let mut converged = false;

    let mut f = k.dot(&alpha);
    let mut grad;
    loop {
        let obj = objective_value(&alpha, &f);
        if !obj.is_finite() {
            return Err(Error::Diverged {
                iteration: iterations,
            });
        }
        if opts.record_trace {
            trace.push(obj);
        }
        let mut clamped = false;
        let inv = f.mapv(|v| {
            if v.abs() < CLAMP_BELOW {
                clamped = true;
                if v < 0.0 {
                    -CLAMP_VALUE
                } else {
                    CLAMP_VALUE
                }
            } else {
                1.0 / v
            }
        });
        if clamped {
            clamp_warnings += 1;
        }
        let natural = Zip::from(&alpha).and(&inv).map_collect(|&a, &v| 2.0 * (a - v / nf));
        grad = match opts.method {
            GradientMethod::Natural => natural,
            GradientMethod::Standard => k.dot(&natural),
        };
        if sup_norm(&grad) < opts.grad_tol {
            converged = true;
            break;
        }
        if iterations == opts.n_iters {
            break;
        }
        alpha.scaled_add(-opts.lr, &grad);
        f = k.dot(&alpha);
        iterations += 1;
    }

    let objective = objective_value(&alpha, &f);
    Ok(FitOutcome {
        rkhs_norm_sq: alpha.dot(&f),
        alpha,
        iterations,
        converged,
        objective,
        grad_norm: sup_norm(&grad),
        clamp_warnings,
        init_redraws,
        trace,
    })
}

/// Objective without the zero-density check; `+∞` when some `f_i = 0`.
fn objective_value(alpha: &Array1<f64>, f: &Array1<f64>) -> f64 {
    let n = f.len() as f64;
    let log_sum: f64 = f.iter().map(|v| (v * v).ln()).sum();
    -log_sum / n + alpha.dot(f)
}

fn sup_norm(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn equicorrelated(n: usize, rho: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { rho })
    }

    #[test]
    fn objective_examples() {
        let k = array![[1.0]];
        assert_eq!(objective(array![1.0].view(), k.view()).unwrap(), 1.0);
        let v = objective(array![2.0].view(), k.view()).unwrap();
        assert_relative_eq!(v, 4.0 - 4f64.ln(), epsilon = 1e-15);
        assert!((v - 2.6137).abs() < 1e-4);
        assert_eq!(v, objective(array![-2.0].view(), k.view()).unwrap());
    }

    #[test]
    fn objective_zero_density() {
        let k = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            objective(array![1.0, 0.0].view(), k.view()),
            Err(Error::ZeroDensity { index: 1 })
        ));
    }

    #[test]
    fn gradient_examples() {
        let k = array![[1.0]];
        assert_eq!(grad_standard(array![1.0].view(), k.view()).unwrap(), array![0.0]);
        assert_eq!(grad_natural(array![1.0].view(), k.view()).unwrap(), array![0.0]);
        let eye = Array2::eye(2);
        assert_eq!(grad_standard(array![1.0, 1.0].view(), eye.view()).unwrap(), array![1.0, 1.0]);
    }

    #[test]
    fn symmetric_fixed_point_is_stationary() {
        for rho in [0.0, 0.3, 0.5, 0.9] {
            let k = equicorrelated(2, rho);
            let t = 1.0 / (2.0 * (1.0 + rho)).sqrt();
            let g = grad_natural(array![t, t].view(), k.view()).unwrap();
            assert!(g.iter().all(|v| v.abs() < 1e-14), "{g}");
        }
    }

    #[test]
    fn fit_single_point() {
        let k = array![[1.0]];
        let out = fit(k.view(), &SolverOptions::default()).unwrap();
        assert!(out.converged);
        assert_relative_eq!(out.alpha[0].abs(), 1.0, epsilon = 1e-8);
        assert_relative_eq!(out.objective, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_equicorrelated_pair() {
        let k = equicorrelated(2, 0.5);
        let out = fit(k.view(), &SolverOptions::default()).unwrap();
        let t = 1.0 / 3f64.sqrt();
        assert!(out.converged);
        for &a in &out.alpha {
            assert_relative_eq!(a, t, epsilon = 1e-8);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let k = equicorrelated(5, 0.2);
        let opts = SolverOptions {
            n_iters: 20,
            record_trace: true,
            ..Default::default()
        };
        assert_eq!(fit(k.view(), &opts).unwrap(), fit(k.view(), &opts).unwrap());
    }

    #[test]
    fn user_init_length_checked() {
        let opts = SolverOptions {
            init: Init::User(vec![1.0]),
            ..Default::default()
        };
        assert!(fit(Array2::eye(2).view(), &opts).is_err());
    }

    #[test]
    fn divergence_reported() {
        let k = array![[1.0, 0.9], [0.9, 1.0]] * 1e3;
        let opts = SolverOptions {
            method: GradientMethod::Standard,
            lr: 1.0,
            ..Default::default()
        };
        assert!(matches!(fit(k.view(), &opts), Err(Error::Diverged { .. })));
    }

    #[test]
    fn jitter_scales_with_trace() {
        let mut k = array![[2.0, 0.0], [0.0, 4.0]];
        add_jitter(&mut k);
        assert_eq!(k[[0, 0]], 2.0 + 3e-10);
        assert_eq!(k[[0, 1]], 0.0);
    }

    fn psd_strategy(max_n: usize) -> impl Strategy<Value = Array2<f64>> {
        (1..=max_n, 1..=4usize).prop_flat_map(|(n, r)| {
            prop::collection::vec(-1.0..1.0f64, n * (r + 1)).prop_map(move |v| {
                let b = Array2::from_shape_vec((n, r + 1), v).unwrap();
                b.dot(&b.t()) + Array2::<f64>::eye(n) * 0.1
            })
        })
    }

    /// Gaussian Gram matrices of random point clouds: PSD with nonnegative entries.
    fn gram_strategy(max_n: usize) -> impl Strategy<Value = Array2<f64>> {
        (1..=max_n, 1..=3usize, 0.2..2.0f64).prop_flat_map(|(n, d, sigma)| {
            prop::collection::vec(-2.0..2.0f64, n * d).prop_map(move |v| {
                let x = Array2::from_shape_vec((n, d), v).unwrap();
                Array2::from_shape_fn((n, n), |(i, j)| {
                    let diff = &x.row(i) - &x.row(j);
                    (-diff.dot(&diff) / (2.0 * sigma * sigma)).exp()
                })
            })
        })
    }

    fn alpha_for(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05..2.0f64, n)
    }

    #[test]
    fn first_step_can_overshoot_from_tiny_start() {
        // With K = [1] the step maps α to (1 − 2λ)α + 2λ/α, so a tiny α jumps far
        // past the optimum at 1 and the objective rises before settling.
        let k = array![[1.0]];
        let opts = SolverOptions {
            lr: 0.1,
            n_iters: 200,
            init: Init::User(vec![0.01]),
            record_trace: true,
            ..Default::default()
        };
        let out = fit(k.view(), &opts).unwrap();
        assert!(out.trace[1] > out.trace[0]);
        assert!(out.trace[1..].windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(out.converged);
        assert!((out.alpha[0] - 1.0).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn gradient_identity(
            (k, alpha) in psd_strategy(12).prop_flat_map(|k| {
                let n = k.nrows();
                (Just(k), alpha_for(n))
            })
        ) {
            let alpha = Array1::from(alpha);
            prop_assume!(k.dot(&alpha).iter().all(|v| v.abs() > 1e-3));
            let nat = grad_natural(alpha.view(), k.view()).unwrap();
            let std = grad_standard(alpha.view(), k.view()).unwrap();
            let lhs = k.dot(&nat);
            for (a, b) in lhs.iter().zip(&std) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn gradient_matches_finite_differences(
            (k, alpha) in psd_strategy(8).prop_flat_map(|k| {
                let n = k.nrows();
                (Just(k), alpha_for(n))
            })
        ) {
            let alpha = Array1::from(alpha);
            prop_assume!(k.dot(&alpha).iter().all(|v| v.abs() > 0.05));
            let g = grad_standard(alpha.view(), k.view()).unwrap();
            let h = 1e-6;
            for i in 0..alpha.len() {
                let mut p = alpha.clone();
                p[i] += h;
                let mut m = alpha.clone();
                m[i] -= h;
                let fd = (objective(p.view(), k.view()).unwrap()
                    - objective(m.view(), k.view()).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "{} vs {}", fd, g[i]);
            }
        }

        // The first step from a random start may overshoot when some `f_i`
        // is tiny; see `first_step_can_overshoot_from_tiny_start`.
        #[test]
        fn natural_descent_is_monotone(k in gram_strategy(60), seed in 0u64..1000, lr in 0.01..0.1f64) {
            let opts = SolverOptions { lr, n_iters: 200, seed, record_trace: true, ..Default::default() };
            let out = fit(k.view(), &opts).unwrap();
            for w in out.trace[1..].windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
            }
        }

        #[test]
        fn cone_invariance(
            (k, alpha) in (1..20usize).prop_flat_map(|n| (
                prop::collection::vec(0.0..1.0f64, n * n).prop_map(move |v| {
                    let b = Array2::from_shape_vec((n, n), v).unwrap();
                    (&b + &b.t()) * 0.5 + Array2::<f64>::eye(n)
                }),
                alpha_for(n),
            )),
            lr in 0.001..0.499f64,
        ) {
            let alpha = Array1::from(alpha);
            let g = grad_natural(alpha.view(), k.view()).unwrap();
            let next = &alpha - &(g * lr);
            prop_assert!(k.dot(&next).iter().all(|&v| v >= -1e-12));
        }

        #[test]
        // Gram matrices keep every f_i away from zero, where rounding would be amplified.
        fn kernel_rescaling_rescales_trajectory(k in gram_strategy(10), c in 0.1..10.0f64) {
            let n = k.nrows();
            let init: Vec<f64> = (0..n).map(|i| 0.5 + i as f64 / n as f64).collect();
            let base = SolverOptions {
                n_iters: 50,
                grad_tol: 0.0,
                init: Init::User(init.clone()),
                ..Default::default()
            };
            let scaled = SolverOptions {
                init: Init::User(init.iter().map(|v| v / c.sqrt()).collect()),
                ..base.clone()
            };
            let a = fit(k.view(), &base).unwrap();
            let b = fit((&k * c).view(), &scaled).unwrap();
            for (x, y) in a.alpha.iter().zip(&b.alpha) {
                prop_assert!((x / c.sqrt() - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn rkhs_norm_scales_quadratically(k in psd_strategy(10), c in -3.0..3.0f64) {
            let alpha = Array1::from_iter((0..k.nrows()).map(|i| i as f64 * 0.1 + 0.2));
            let base = rkhs_norm_sq(alpha.view(), k.view());
            let scaled = rkhs_norm_sq((&alpha * c).view(), k.view());
            prop_assert!((scaled - c * c * base).abs() <= 1e-12 * (1.0 + scaled.abs()));
        }
    }
}
