//! Anomaly-detection protocol: split, standardize, tune, fit, score by
//! negative density, and average AUC over seeds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{duplicate_anomalies, split, standardize, Dataset, Standardization};
use super::metrics::auc_roc;
use crate::baseline::{ClosedFormKernel, KernelFamily};
use crate::error::{Error, Result};
use crate::model::{fit_model, KdeModel, KernelSpec};
use crate::score::{log_grid_descending, tune_kde, tune_sosrep, FdOptions};
use crate::sdo::{FrequencySpec, SamplingScheme, SdoParams};
use crate::solver::SolverOptions;

pub const REPORT_FORMAT_VERSION: &str = "sosrep-experiment/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdMethod {
    SosrepSdo,
    SosrepGaussian,
    SosrepLaplacian,
    KdeSdo,
    KdeGaussian,
    KdeLaplacian,
}

impl AdMethod {
    pub const ALL: [AdMethod; 6] = [
        AdMethod::SosrepSdo,
        AdMethod::SosrepGaussian,
        AdMethod::SosrepLaplacian,
        AdMethod::KdeSdo,
        AdMethod::KdeGaussian,
        AdMethod::KdeLaplacian,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AdMethod::SosrepSdo => "sosrep_sdo",
            AdMethod::SosrepGaussian => "sosrep_gaussian",
            AdMethod::SosrepLaplacian => "sosrep_laplacian",
            AdMethod::KdeSdo => "kde_sdo",
            AdMethod::KdeGaussian => "kde_gaussian",
            AdMethod::KdeLaplacian => "kde_laplacian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }

    fn is_sosrep(&self) -> bool {
        matches!(
            self,
            AdMethod::SosrepSdo | AdMethod::SosrepGaussian | AdMethod::SosrepLaplacian
        )
    }

    fn family(&self) -> Option<KernelFamily> {
        match self {
            AdMethod::SosrepGaussian | AdMethod::KdeGaussian => Some(KernelFamily::Gaussian),
            AdMethod::SosrepLaplacian | AdMethod::KdeLaplacian => Some(KernelFamily::Laplacian),
            AdMethod::SosrepSdo | AdMethod::KdeSdo => None,
        }
    }
}

/// Every setting of the protocol apart from the data and the seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdConfig {
    /// Number of random features `T`.
    pub n_features: usize,
    /// Derivative order; `None` selects `⌊d/2⌋ + 1`.
    pub m: Option<u32>,
    pub scheme: SamplingScheme,
    /// Candidate smoothness values for SDO kernels, decreasing.
    pub a_grid: Vec<f64>,
    /// Candidate bandwidths for closed-form kernels, decreasing.
    pub sigma_grid: Vec<f64>,
    pub solver: SolverOptions,
    pub fd: FdOptions,
    pub train_frac: f64,
}

impl Default for AdConfig {
    fn default() -> Self {
        Self {
            n_features: 4096,
            m: None,
            scheme: SamplingScheme::Iid,
            a_grid: log_grid_descending(1e-6, 1e2, 25).expect("valid grid"),
            sigma_grid: log_grid_descending(1e-2, 1e1, 25).expect("valid grid"),
            solver: SolverOptions::default(),
            fd: FdOptions::default(),
            train_frac: 0.7,
        }
    }
}

impl AdConfig {
    /// Kernel with the largest candidate scale for `method` in dimension `d`.
    pub fn kernel_for(&self, method: AdMethod, d: usize, seed: u64) -> Result<KernelSpec> {
        match method.family() {
            None => {
                let a = *self
                    .a_grid
                    .first()
                    .ok_or(Error::EmptyInput("smoothness grid"))?;
                let params = match self.m {
                    Some(m) => SdoParams::new(a, m, d)?,
                    None => SdoParams::with_default_order(a, d)?,
                };
                Ok(KernelSpec::Sdo(FrequencySpec {
                    scheme: self.scheme,
                    ..FrequencySpec::new(params, self.n_features, seed)
                }))
            }
            Some(family) => {
                let sigma = *self
                    .sigma_grid
                    .first()
                    .ok_or(Error::EmptyInput("bandwidth grid"))?;
                Ok(KernelSpec::ClosedForm(ClosedFormKernel::new(family, sigma, d)?))
            }
        }
    }

    fn grid_for(&self, method: AdMethod) -> &[f64] {
        match method.family() {
            None => &self.a_grid,
            Some(_) => &self.sigma_grid,
        }
    }
}

/// Outcome of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub auc: Option<f64>,
    /// Selected smoothness or bandwidth.
    pub selected: Option<f64>,
    pub stable_minimum: Option<bool>,
    pub fd_evaluations: usize,
    pub standardization: Option<Standardization>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

/// Per-seed AUCs of one method on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: String,
    pub dataset: String,
    pub method: AdMethod,
    /// Anomaly duplication factor applied before splitting.
    pub duplication: usize,
    pub seeds: Vec<SeedOutcome>,
    pub per_seed_auc: Vec<f64>,
    pub mean_auc: f64,
    pub config: AdConfig,
    pub warnings: Vec<String>,
}

fn run_seed(ds: &Dataset, method: AdMethod, seed: u64, config: &AdConfig) -> Result<SeedOutcome> {
    let (train, test, mut warnings) = split(ds, seed, config.train_frac)?;
    let (train, test, stats) = standardize(&train, &test)?;
    let labels = test.labels()?;
    let kernel = config.kernel_for(method, ds.dim(), seed)?;
    let solver = SolverOptions {
        seed,
        ..config.solver.clone()
    };
    let fd = FdOptions { seed, ..config.fd };
    let grid = config.grid_for(method);
    let tuned = if method.is_sosrep() {
        tune_sosrep(train.x.view(), test.x.view(), &kernel, grid, &solver, &fd)?
    } else {
        tune_kde(train.x.view(), test.x.view(), &kernel, grid, &fd)?
    };
    warnings.extend(tuned.warnings.iter().cloned());
    let kernel = kernel.with_scale_parameter(tuned.selected)?;
    let density = if method.is_sosrep() {
        let model = fit_model(train.x.view(), &kernel, &solver)?;
        if model.outcome().clamp_warnings > 0 {
            warnings.push(format!(
                "{} iterations clamped a near-zero density",
                model.outcome().clamp_warnings
            ));
        }
        model.evaluate_density(test.x.view())?
    } else {
        KdeModel::new(train.x.view(), &kernel)?.density(test.x.view())?
    };
    let scores: Vec<f64> = density.iter().map(|v| -v).collect();
    let auc = auc_roc(&scores, labels)?;
    Ok(SeedOutcome {
        seed,
        auc: Some(auc),
        selected: Some(tuned.selected),
        stable_minimum: Some(tuned.stable),
        fd_evaluations: tuned.evaluations,
        standardization: Some(stats),
        warnings,
        error: None,
    })
}

/// Runs the protocol for each seed and averages the AUC over the seeds that
/// succeed. Fails only when every seed fails.
pub fn run_ad(ds: &Dataset, method: AdMethod, seeds: &[u64], config: &AdConfig) -> Result<ExperimentReport> {
    ds.labels()?;
    if seeds.is_empty() {
        return Err(Error::EmptyInput("seed list"));
    }
    let results: Vec<Result<SeedOutcome>> = seeds
        .par_iter()
        .map(|&s| run_seed(ds, method, s, config))
        .collect();
    let mut outcomes = Vec::with_capacity(seeds.len());
    let mut warnings = Vec::new();
    let mut first_error = None;
    for (&seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                warnings.push(format!("seed {seed} failed: {e}"));
                outcomes.push(SeedOutcome {
                    seed,
                    auc: None,
                    selected: None,
                    stable_minimum: None,
                    fd_evaluations: 0,
                    standardization: None,
                    warnings: Vec::new(),
                    error: Some(e.to_string()),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    let per_seed_auc: Vec<f64> = outcomes.iter().filter_map(|o| o.auc).collect();
    if per_seed_auc.is_empty() {
        return Err(first_error.expect("at least one seed"));
    }
    let mean_auc = per_seed_auc.iter().sum::<f64>() / per_seed_auc.len() as f64;
    Ok(ExperimentReport {
        format_version: REPORT_FORMAT_VERSION.to_string(),
        dataset: ds.name.clone(),
        method,
        duplication: 1,
        seeds: outcomes,
        per_seed_auc,
        mean_auc,
        config: config.clone(),
        warnings,
    })
}

/// One report per duplication factor in `ks`.
pub fn duplicates_experiment(
    ds: &Dataset,
    method: AdMethod,
    ks: &[usize],
    seeds: &[u64],
    config: &AdConfig,
) -> Result<Vec<ExperimentReport>> {
    ks.iter()
        .map(|&k| {
            let dup = duplicate_anomalies(ds, k)?;
            let mut report = run_ad(&dup, method, seeds, config)?;
            report.duplication = k;
            Ok(report)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synthetic::gaussian_mixture_with_outliers;

    fn quick_config() -> AdConfig {
        AdConfig {
            n_features: 128,
            a_grid: log_grid_descending(1e-4, 1e1, 9).unwrap(),
            sigma_grid: log_grid_descending(0.05, 5.0, 9).unwrap(),
            solver: SolverOptions {
                n_iters: 200,
                ..Default::default()
            },
            fd: FdOptions {
                n_fd_iters: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in AdMethod::ALL {
            assert_eq!(AdMethod::parse(m.name()).unwrap(), m);
        }
        assert!(AdMethod::parse("iforest").is_err());
    }

    #[test]
    fn report_mean_and_determinism() {
        let ds = gaussian_mixture_with_outliers(120, 0.1, 0).unwrap();
        let cfg = quick_config();
        let a = run_ad(&ds, AdMethod::KdeGaussian, &[0, 1], &cfg).unwrap();
        let b = run_ad(&ds, AdMethod::KdeGaussian, &[0, 1], &cfg).unwrap();
        assert_eq!(a, b);
        let mean = a.per_seed_auc.iter().sum::<f64>() / a.per_seed_auc.len() as f64;
        assert_eq!(a.mean_auc, mean);
        assert_eq!(a.per_seed_auc.len(), 2);
    }

    #[test]
    fn unlabelled_data_rejected() {
        let ds = Dataset::new("u", ndarray::Array2::zeros((10, 2)), None).unwrap();
        assert!(matches!(
            run_ad(&ds, AdMethod::KdeGaussian, &[0], &quick_config()),
            Err(Error::LabelsRequired)
        ));
    }
}
