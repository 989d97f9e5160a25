//! How often each gradient method drives `f` negative at the training points,
//! starting from nonnegative coefficients.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{gram_matrix, KernelSpec};
use crate::rng::{derive_seed, stream};
use crate::solver::{fit, initial_alpha, GradientMethod, Init, SolverOptions};

pub const NEGFRAC_FORMAT_VERSION: &str = "sosrep-negfrac/1";

/// Number of worst initializations averaged per method.
pub const WORST_K: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegFracConfig {
    pub n_init: usize,
    pub n_iters: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for NegFracConfig {
    fn default() -> Self {
        Self {
            n_init: 50,
            n_iters: 1000,
            lr: 0.01,
            seed: 0,
        }
    }
}

impl NegFracConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 || self.n_iters == 0 {
            return Err(Error::InvalidParameter(
                "n_init and n_iters must be positive".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidParameter(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: GradientMethod,
    /// Final negative fraction per initialization.
    pub fractions: Vec<f64>,
    /// Mean of the largest [`WORST_K`] final fractions.
    pub worst_mean: f64,
    pub divergences: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegFracReport {
    pub format_version: String,
    pub dataset: String,
    pub kernel: KernelSpec,
    pub config: NegFracConfig,
    pub n_train: usize,
    /// Negative fraction of every initialization before any step.
    pub initial_fractions: Vec<f64>,
    pub initial_worst_mean: f64,
    pub natural: MethodSummary,
    pub standard: MethodSummary,
    pub warnings: Vec<String>,
}

/// Fraction of entries of `k α` below zero.
pub fn negative_fraction(k: ArrayView2<f64>, alpha: &[f64]) -> f64 {
    let f = k.dot(&ndarray::ArrayView1::from(alpha));
    f.iter().filter(|&&v| v < 0.0).count() as f64 / f.len() as f64
}

/// Mean of the `k` largest values.
pub fn worst_mean(values: &[f64], k: usize) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = k.min(v.len()).max(1);
    v[..k].iter().sum::<f64>() / k as f64
}

fn run_method(
    k: &Array2<f64>,
    method: GradientMethod,
    seeds: &[u64],
    cfg: &NegFracConfig,
    warnings: &mut Vec<String>,
) -> Result<MethodSummary> {
    let results: Vec<Result<Option<f64>>> = seeds
        .par_iter()
        .map(|&seed| {
            let opts = SolverOptions {
                method,
                lr: cfg.lr,
                n_iters: cfg.n_iters,
                seed,
                init: Init::AbsGaussian,
                grad_tol: 0.0,
                record_trace: false,
            };
            match fit(k.view(), &opts) {
                Ok(out) => Ok(Some(negative_fraction(k.view(), out.alpha.as_slice().expect("contiguous")))),
                Err(e) if e.is_numerical() => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut fractions = Vec::with_capacity(seeds.len());
    let mut divergences = 0;
    for (j, r) in results.into_iter().enumerate() {
        match r? {
            Some(f) => fractions.push(f),
            None => {
                divergences += 1;
                warnings.push(format!(
                    "{method:?} run {j} failed numerically; counted as fraction 1"
                ));
                fractions.push(1.0);
            }
        }
    }
    Ok(MethodSummary {
        method,
        worst_mean: worst_mean(&fractions, WORST_K),
        fractions,
        divergences,
    })
}

/// Runs both gradient methods from the same `n_init` abs-Gaussian starts on
/// the Gram matrix of `x`.
pub fn negative_fraction_experiment(
    name: &str,
    x: ArrayView2<f64>,
    kernel: &KernelSpec,
    cfg: &NegFracConfig,
) -> Result<NegFracReport> {
    cfg.validate()?;
    let k = gram_matrix(x, kernel)?;
    let seeds: Vec<u64> = (0..cfg.n_init as u64)
        .map(|j| derive_seed(cfg.seed, &[stream::NEGFRAC, j]))
        .collect();
    let mut initial_fractions = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let opts = SolverOptions {
            seed,
            ..Default::default()
        };
        let (alpha, _) = initial_alpha(k.view(), &opts)?;
        initial_fractions.push(negative_fraction(k.view(), alpha.as_slice().expect("contiguous")));
    }
    let mut warnings = Vec::new();
    let natural = run_method(&k, GradientMethod::Natural, &seeds, cfg, &mut warnings)?;
    let standard = run_method(&k, GradientMethod::Standard, &seeds, cfg, &mut warnings)?;
    Ok(NegFracReport {
        format_version: NEGFRAC_FORMAT_VERSION.to_string(),
        dataset: name.to_string(),
        kernel: *kernel,
        config: cfg.clone(),
        n_train: x.nrows(),
        initial_worst_mean: worst_mean(&initial_fractions, WORST_K),
        initial_fractions,
        natural,
        standard,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::ClosedFormKernel;
    use crate::harness::synthetic::two_clusters;

    #[test]
    fn worst_mean_examples() {
        assert!((worst_mean(&[0.0, 0.5, 0.1, 0.2, 0.3, 0.4], 5) - 0.3).abs() < 1e-15);
        assert!((worst_mean(&[0.2, 0.4], 5) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn natural_keeps_nonnegative_kernel_positive() {
        let ds = two_clusters(30, 30, 0).unwrap();
        let kernel = KernelSpec::ClosedForm(ClosedFormKernel::gaussian(1.0, 2).unwrap());
        let cfg = NegFracConfig {
            n_init: 6,
            n_iters: 200,
            ..Default::default()
        };
        let r = negative_fraction_experiment("two-clusters", ds.x.view(), &kernel, &cfg).unwrap();
        assert!(r.initial_fractions.iter().all(|&f| f == 0.0));
        assert!(r.natural.fractions.iter().all(|&f| f == 0.0));
        for f in r.standard.fractions.iter().chain(&r.natural.fractions) {
            assert!((0.0..=1.0).contains(f));
        }
    }
}
