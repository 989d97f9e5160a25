//! Empirical consistency check: fit on growing samples from a smooth bump
//! density with `a = 1/N` and track the L2 error of the fitted square root.

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fit_model, KernelSpec};
use crate::rng::{derive_seed, rng_for, stream};
use crate::sdo::{FrequencySpec, SamplingScheme, SdoParams};
use crate::solver::SolverOptions;

pub const CONSISTENCY_FORMAT_VERSION: &str = "sosrep-consistency/1";

/// Unnormalized bump `exp(−1/(1 − x²))` on `(−1, 1)`, zero elsewhere.
fn bump(x: f64) -> f64 {
    if x.abs() < 1.0 {
        (-1.0 / (1.0 - x * x)).exp()
    } else {
        0.0
    }
}

fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1]))
        .sum()
}

/// Square root of the target density: a bump scaled to unit L2 norm.
#[derive(Clone, Copy, Debug)]
pub struct BumpRoot {
    scale: f64,
}

impl BumpRoot {
    pub fn new() -> Self {
        let n = 20_001;
        let grid: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
        let sq: Vec<f64> = grid.iter().map(|&x| bump(x).powi(2)).collect();
        Self {
            scale: trapezoid(&grid, &sq).sqrt().recip(),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.scale * bump(x)
    }

    /// `n` draws from the density `v²` by rejection from the uniform law on
    /// `(−1, 1)`.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        // v² peaks at x = 0 where the bump equals e^{-1}.
        let peak = (-2.0f64).exp();
        let mut out = Array2::zeros((n, 1));
        let mut filled = 0;
        while filled < n {
            let x: f64 = rng.random_range(-1.0..1.0);
            let u: f64 = rng.random();
            if u * peak < bump(x).powi(2) {
                out[[filled, 0]] = x;
                filled += 1;
            }
        }
        out
    }
}

impl Default for BumpRoot {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    pub sample_sizes: Vec<usize>,
    pub repetitions: usize,
    pub n_features: usize,
    pub scheme: SamplingScheme,
    pub solver: SolverOptions,
    /// Evaluation grid `[lo, hi]` and its number of points.
    pub grid: (f64, f64, usize),
    pub seed: u64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            sample_sizes: vec![50, 200, 800],
            repetitions: 5,
            n_features: 2048,
            scheme: SamplingScheme::Stratified,
            solver: SolverOptions::default(),
            grid: (-1.5, 1.5, 1201),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub n: usize,
    /// Smoothness used for this sample size, `1/N`.
    pub a: f64,
    pub errors: Vec<f64>,
    pub median_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub format_version: String,
    pub config: ConsistencyConfig,
    pub rows: Vec<ConsistencyRow>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// L2 distance on `grid` between `f` rescaled to unit norm (sign chosen to
/// agree with `v`) and the target `v`.
pub fn normalized_l2_error(grid: &[f64], f: &[f64], v: &[f64]) -> Result<f64> {
    let sq: Vec<f64> = f.iter().map(|x| x * x).collect();
    let norm = trapezoid(grid, &sq).sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::InvalidParameter("fitted function vanishes on the grid".into()));
    }
    let cross: Vec<f64> = f.iter().zip(v).map(|(a, b)| a * b).collect();
    let sign = if trapezoid(grid, &cross) < 0.0 { -1.0 } else { 1.0 };
    let diff: Vec<f64> = f
        .iter()
        .zip(v)
        .map(|(a, b)| (sign * a / norm - b).powi(2))
        .collect();
    Ok(trapezoid(grid, &diff).sqrt())
}

fn one_error(cfg: &ConsistencyConfig, target: &BumpRoot, grid: &Array2<f64>, v: &[f64], n: usize, rep: usize) -> Result<f64> {
    let path = [stream::CONSISTENCY, n as u64, rep as u64];
    let x = target.sample(n, &mut rng_for(cfg.seed, &path));
    let params = SdoParams::new(1.0 / n as f64, 1, 1)?;
    let spec = FrequencySpec {
        scheme: cfg.scheme,
        ..FrequencySpec::new(params, cfg.n_features, derive_seed(cfg.seed, &path))
    };
    let solver = SolverOptions {
        seed: derive_seed(cfg.seed, &path),
        ..cfg.solver.clone()
    };
    let model = fit_model(x.view(), &KernelSpec::Sdo(spec), &solver)?;
    let f = model.evaluate_f(grid.view())?;
    let g = grid.column(0).to_vec();
    normalized_l2_error(&g, f.as_slice().expect("contiguous"), v)
}

/// Median L2 error of the fitted square root for every sample size.
pub fn consistency_experiment(cfg: &ConsistencyConfig) -> Result<ConsistencyReport> {
    let (lo, hi, n_grid) = cfg.grid;
    if !(lo < hi) || n_grid < 2 || cfg.repetitions == 0 || cfg.sample_sizes.contains(&0) {
        return Err(Error::InvalidParameter(
            "need lo < hi, at least two grid points, positive sizes and repetitions".into(),
        ));
    }
    let target = BumpRoot::new();
    let grid_pts = Array1::linspace(lo, hi, n_grid);
    let v: Vec<f64> = grid_pts.iter().map(|&x| target.value(x)).collect();
    let grid = grid_pts.insert_axis(ndarray::Axis(1));
    let mut rows = Vec::with_capacity(cfg.sample_sizes.len());
    for &n in &cfg.sample_sizes {
        let errors = (0..cfg.repetitions)
            .into_par_iter()
            .map(|rep| one_error(cfg, &target, &grid, &v, n, rep))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(ConsistencyRow {
            n,
            a: 1.0 / n as f64,
            median_error: median(&errors),
            errors,
        });
    }
    Ok(ConsistencyReport {
        format_version: CONSISTENCY_FORMAT_VERSION.to_string(),
        config: cfg.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_has_unit_norm() {
        let t = BumpRoot::new();
        let g: Vec<f64> = (0..4001).map(|i| -1.0 + i as f64 / 2000.0).collect();
        let sq: Vec<f64> = g.iter().map(|&x| t.value(x).powi(2)).collect();
        assert!((trapezoid(&g, &sq) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn samples_lie_in_support() {
        let x = BumpRoot::new().sample(500, &mut rng_for(0, &[0]));
        assert!(x.iter().all(|v| v.abs() < 1.0));
        let mean = x.mean().unwrap();
        assert!(mean.abs() < 0.05);
    }

    #[test]
    fn error_ignores_scale_and_sign() {
        let t = BumpRoot::new();
        let g: Vec<f64> = (0..801).map(|i| -2.0 + i as f64 / 200.0).collect();
        let v: Vec<f64> = g.iter().map(|&x| t.value(x)).collect();
        let f: Vec<f64> = v.iter().map(|x| -3.0 * x).collect();
        assert!(normalized_l2_error(&g, &f, &v).unwrap() < 1e-12);
    }

    #[test]
    fn small_run_reports_a_equal_inverse_n() {
        let cfg = ConsistencyConfig {
            sample_sizes: vec![20, 40],
            repetitions: 2,
            n_features: 128,
            solver: SolverOptions {
                n_iters: 100,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = consistency_experiment(&cfg).unwrap();
        for row in &r.rows {
            assert_eq!(row.a, 1.0 / row.n as f64);
            assert!(row.errors.iter().all(|e| e.is_finite() && *e > 0.0));
        }
    }
}
