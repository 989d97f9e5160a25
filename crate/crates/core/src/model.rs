//! Fitted pre-density and KDE models.
//!
//! Both models are kernel expansions `g(y) = Σ_i c_i k(x_i, y)`. SOSREP
//! reports `g²` with coefficients from the solver; KDE reports `g` with
//! uniform coefficients `1/N`. With a sampled SDO kernel the expansion is
//! collapsed onto per-feature weights `w = Φ_trainᵀ c`, so evaluation costs
//! `O(T)` per query.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{closed_form_matrix, ClosedFormKernel};
use crate::error::{Error, Result};
use crate::sdo::{feature_map, FrequencySample, FrequencySpec};
use crate::solver::{add_jitter, fit, FitOutcome, SolverOptions};

pub const MODEL_FORMAT_VERSION: &str = "sosrep-model/1";

/// Kernel used by a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSpec {
    Sdo(FrequencySpec),
    ClosedForm(ClosedFormKernel),
}

impl KernelSpec {
    pub fn dim(&self) -> usize {
        match self {
            KernelSpec::Sdo(s) => s.params.d(),
            KernelSpec::ClosedForm(k) => k.dim(),
        }
    }

    /// The smoothness `a` or bandwidth `σ`.
    pub fn scale_parameter(&self) -> f64 {
        match self {
            KernelSpec::Sdo(s) => s.params.a(),
            KernelSpec::ClosedForm(k) => k.sigma(),
        }
    }

    /// Same kernel with its smoothness (SDO) or bandwidth (closed form)
    /// replaced.
    pub fn with_scale_parameter(&self, v: f64) -> Result<Self> {
        Ok(match self {
            KernelSpec::Sdo(s) => KernelSpec::Sdo(FrequencySpec {
                params: s.params.with_a(v)?,
                ..*s
            }),
            KernelSpec::ClosedForm(k) => KernelSpec::ClosedForm(k.with_sigma(v)?),
        })
    }

    fn instantiate(&self) -> Result<KernelInstance> {
        Ok(match self {
            KernelSpec::Sdo(s) => KernelInstance::Sampled(s.generate()?),
            KernelSpec::ClosedForm(k) => KernelInstance::ClosedForm(*k),
        })
    }
}

#[derive(Clone, Debug)]
enum KernelInstance {
    Sampled(FrequencySample),
    ClosedForm(ClosedFormKernel),
}

/// Values, gradients and Laplacians of `g(y) = Σ_i c_i k(x_i, y)`.
#[derive(Clone, Debug)]
pub enum KernelExpansion {
    /// `g(y) = A Σ_t w_t cos(⟨z_t, y⟩ + b_t)`.
    Features {
        fs: FrequencySample,
        weights: Array1<f64>,
    },
    ClosedForm {
        kernel: ClosedFormKernel,
        centers: Array2<f64>,
        coeffs: Array1<f64>,
    },
}

/// `g`, `∇g` and `Δg` at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalExpansion {
    pub value: f64,
    pub gradient: Array1<f64>,
    pub laplacian: f64,
}

impl KernelExpansion {
    fn build(instance: &KernelInstance, x: ArrayView2<f64>, coeffs: &Array1<f64>) -> Result<Self> {
        Ok(match instance {
            KernelInstance::Sampled(fs) => KernelExpansion::Features {
                weights: feature_map(x, fs)?.t().dot(coeffs),
                fs: fs.clone(),
            },
            KernelInstance::ClosedForm(k) => KernelExpansion::ClosedForm {
                kernel: *k,
                centers: x.to_owned(),
                coeffs: coeffs.clone(),
            },
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            KernelExpansion::Features { fs, .. } => fs.dim(),
            KernelExpansion::ClosedForm { kernel, .. } => kernel.dim(),
        }
    }

    /// Per-feature weights of a sampled-kernel expansion.
    pub fn feature_weights(&self) -> Option<&Array1<f64>> {
        match self {
            KernelExpansion::Features { weights, .. } => Some(weights),
            KernelExpansion::ClosedForm { .. } => None,
        }
    }

    /// The expansion multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            KernelExpansion::Features { fs, weights } => KernelExpansion::Features {
                fs: fs.clone(),
                weights: weights * c,
            },
            KernelExpansion::ClosedForm {
                kernel,
                centers,
                coeffs,
            } => KernelExpansion::ClosedForm {
                kernel: *kernel,
                centers: centers.clone(),
                coeffs: coeffs * c,
            },
        }
    }

    /// `g` at every row of `y`.
    pub fn values(&self, y: ArrayView2<f64>) -> Result<Array1<f64>> {
        match self {
            KernelExpansion::Features { fs, weights } => Ok(feature_map(y, fs)?.dot(weights)),
            KernelExpansion::ClosedForm {
                kernel,
                centers,
                coeffs,
            } => Ok(closed_form_matrix(kernel, centers.view(), y)?.t().dot(coeffs)),
        }
    }

    /// `g`, `∇g` and `Δg` at a single point.
    pub fn local(&self, y: ArrayView1<f64>) -> Result<LocalExpansion> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: y.len(),
            });
        }
        match self {
            KernelExpansion::Features { fs, weights } => {
                let amp = fs.feature_amplitude();
                let z = fs.frequencies();
                let phases = z.dot(&y) + fs.phases();
                let mut value = 0.0;
                let mut laplacian = 0.0;
                let mut gradient = Array1::zeros(y.len());
                for ((row, &phase), &w) in z.axis_iter(Axis(0)).zip(&phases).zip(weights) {
                    let (s, c) = phase.sin_cos();
                    value += w * c;
                    laplacian -= w * c * row.dot(&row);
                    gradient.scaled_add(-w * s, &row);
                }
                Ok(LocalExpansion {
                    value: amp * value,
                    gradient: gradient * amp,
                    laplacian: amp * laplacian,
                })
            }
            KernelExpansion::ClosedForm {
                kernel,
                centers,
                coeffs,
            } => {
                let mut value = 0.0;
                let mut gradient = vec![0.0; y.len()];
                let mut laplacian = 0.0;
                for (x, &c) in centers.axis_iter(Axis(0)).zip(coeffs) {
                    kernel.accumulate(x, y, c, &mut value, &mut gradient, &mut laplacian);
                }
                let out = LocalExpansion {
                    value,
                    gradient: Array1::from(gradient),
                    laplacian,
                };
                Ok(out)
            }
        }
    }
}

impl KernelExpansion {
    /// Writes `∇g(y)` into `grad` and returns `g(y)`, skipping the Laplacian.
    /// `y` and `grad` must have length [`Self::dim`].
    pub fn value_and_gradient(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(y.len(), self.dim());
        grad.fill(0.0);
        match self {
            KernelExpansion::Features { fs, weights } => {
                let d = y.len();
                let z = fs.frequencies().as_standard_layout();
                let z = z.as_slice().expect("standard layout");
                let mut value = 0.0;
                for ((row, &b), &w) in z.chunks_exact(d).zip(fs.phases()).zip(weights) {
                    let phase = row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() + b;
                    let (s, c) = phase.sin_cos();
                    value += w * c;
                    let ws = -w * s;
                    for (g, &r) in grad.iter_mut().zip(row) {
                        *g += ws * r;
                    }
                }
                let amp = fs.feature_amplitude();
                grad.iter_mut().for_each(|g| *g *= amp);
                amp * value
            }
            KernelExpansion::ClosedForm {
                kernel,
                centers,
                coeffs,
            } => {
                let d = y.len();
                let centers = centers.as_standard_layout();
                let centers = centers.as_slice().expect("standard layout");
                let mut value = 0.0;
                for (x, &c) in centers.chunks_exact(d).zip(coeffs) {
                    kernel.accumulate_gradient(x, y, c, &mut value, grad);
                }
                value
            }
        }
    }
}

/// A model whose log-density is `exponent · log|g|` for a kernel expansion `g`.
pub trait ScoreModel: Sync {
    fn expansion(&self) -> &KernelExpansion;
    fn exponent(&self) -> f64;

    fn dim(&self) -> usize {
        self.expansion().dim()
    }
}

/// SHA-256 of the little-endian bytes of a matrix, with its shape.
pub fn data_hash(x: ArrayView2<f64>) -> String {
    let mut h = Sha256::new();
    h.update((x.nrows() as u64).to_le_bytes());
    h.update((x.ncols() as u64).to_le_bytes());
    for v in x.iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// SOSREP pre-density `(Σ_i α_i k(x_i, ·))²`.
#[derive(Clone, Debug)]
pub struct FittedModel {
    x_train: Array2<f64>,
    kernel: KernelSpec,
    solver: SolverOptions,
    outcome: FitOutcome,
    expansion: KernelExpansion,
}

/// Builds the training Gram matrix; sampled matrices receive diagonal jitter.
fn gram(instance: &KernelInstance, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    match instance {
        KernelInstance::Sampled(fs) => {
            let phi = feature_map(x, fs)?;
            let mut k = phi.dot(&phi.t());
            add_jitter(&mut k);
            Ok(k)
        }
        KernelInstance::ClosedForm(k) => closed_form_matrix(k, x, x),
    }
}

/// Training Gram matrix exactly as [`fit_model`] builds it.
pub fn gram_matrix(x: ArrayView2<f64>, kernel: &KernelSpec) -> Result<Array2<f64>> {
    check_dim(kernel, x)?;
    gram(&kernel.instantiate()?, x)
}

fn check_dim(kernel: &KernelSpec, x: ArrayView2<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::EmptyInput("training set"));
    }
    if x.ncols() != kernel.dim() {
        return Err(Error::DimensionMismatch {
            expected: kernel.dim(),
            got: x.ncols(),
        });
    }
    Ok(())
}

/// Fits SOSREP on `x_train` with the given kernel.
pub fn fit_model(
    x_train: ArrayView2<f64>,
    kernel: &KernelSpec,
    opts: &SolverOptions,
) -> Result<FittedModel> {
    check_dim(kernel, x_train)?;
    let instance = kernel.instantiate()?;
    let k = gram(&instance, x_train)?;
    let outcome = fit(k.view(), opts)?;
    let expansion = KernelExpansion::build(&instance, x_train, &outcome.alpha)?;
    Ok(FittedModel {
        x_train: x_train.to_owned(),
        kernel: *kernel,
        solver: opts.clone(),
        outcome,
        expansion,
    })
}

impl FittedModel {
    pub fn x_train(&self) -> &Array2<f64> {
        &self.x_train
    }

    pub fn alpha(&self) -> &Array1<f64> {
        &self.outcome.alpha
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn solver_options(&self) -> &SolverOptions {
        &self.solver
    }

    pub fn outcome(&self) -> &FitOutcome {
        &self.outcome
    }

    pub fn feature_weights(&self) -> Option<&Array1<f64>> {
        self.expansion.feature_weights()
    }

    /// `f(y) = Σ_i α_i k(x_i, y)` for every row.
    pub fn evaluate_f(&self, y: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.expansion.values(y)
    }

    /// Pre-density `f(y)²` for every row.
    pub fn evaluate_density(&self, y: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.evaluate_f(y)?.mapv(|v| v * v))
    }

    /// Same model with `f` multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            expansion: self.expansion.scaled(c),
            ..self.clone()
        }
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION.to_string(),
            kernel: self.kernel,
            solver: self.solver.clone(),
            train_sha256: data_hash(self.x_train.view()),
            n_train: self.x_train.nrows(),
            dim: self.x_train.ncols(),
            x_train: self.x_train.rows().into_iter().map(|r| r.to_vec()).collect(),
            outcome: self.outcome.clone(),
            feature_weights: self.feature_weights().map(|w| w.to_vec()),
            run_config: None,
        }
    }

    /// Rebuilds a model, checking the stored hash and cached weights.
    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported model format {:?}",
                file.format_version
            )));
        }
        let flat: Vec<f64> = file.x_train.iter().flatten().copied().collect();
        if file.x_train.iter().any(|r| r.len() != file.dim) {
            return Err(Error::InvalidParameter("ragged training matrix".into()));
        }
        let x_train = Array2::from_shape_vec((file.n_train, file.dim), flat)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        if data_hash(x_train.view()) != file.train_sha256 {
            return Err(Error::InvalidParameter("training data hash mismatch".into()));
        }
        check_dim(&file.kernel, x_train.view())?;
        if file.outcome.alpha.len() != file.n_train {
            return Err(Error::DimensionMismatch {
                expected: file.n_train,
                got: file.outcome.alpha.len(),
            });
        }
        let instance = file.kernel.instantiate()?;
        let expansion = KernelExpansion::build(&instance, x_train.view(), &file.outcome.alpha)?;
        if let (Some(cached), Some(w)) = (&file.feature_weights, expansion.feature_weights()) {
            if cached.as_slice() != w.as_slice().expect("contiguous") {
                return Err(Error::InvalidParameter(
                    "cached feature weights do not match recomputation".into(),
                ));
            }
        }
        Ok(Self {
            x_train,
            kernel: file.kernel,
            solver: file.solver,
            outcome: file.outcome,
            expansion,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json_atomic(path, &self.to_file())
    }

    /// Saves with the producing run's configuration embedded.
    pub fn save_with_config<C: Serialize>(&self, path: &Path, run_config: &C) -> Result<()> {
        let mut file = self.to_file();
        file.run_config = Some(serde_json::to_value(run_config)?);
        crate::io::write_json_atomic(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file(serde_json::from_str(&text)?)
    }
}

impl ScoreModel for FittedModel {
    fn expansion(&self) -> &KernelExpansion {
        &self.expansion
    }

    fn exponent(&self) -> f64 {
        2.0
    }
}

/// Serialized [`FittedModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: String,
    pub kernel: KernelSpec,
    pub solver: SolverOptions,
    pub train_sha256: String,
    pub n_train: usize,
    pub dim: usize,
    pub x_train: Vec<Vec<f64>>,
    pub outcome: FitOutcome,
    pub feature_weights: Option<Vec<f64>>,
    /// Configuration of the run that produced the file; not used on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

/// Kernel density estimate `(1/N) Σ_i k(x_i, ·)`.
#[derive(Clone, Debug)]
pub struct KdeModel {
    kernel: KernelSpec,
    expansion: KernelExpansion,
}

impl KdeModel {
    pub fn new(x_train: ArrayView2<f64>, kernel: &KernelSpec) -> Result<Self> {
        check_dim(kernel, x_train)?;
        let n = x_train.nrows();
        let coeffs = Array1::from_elem(n, 1.0 / n as f64);
        let expansion = KernelExpansion::build(&kernel.instantiate()?, x_train, &coeffs)?;
        Ok(Self {
            kernel: *kernel,
            expansion,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn density(&self, y: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.expansion.values(y)
    }
}

impl ScoreModel for KdeModel {
    fn expansion(&self) -> &KernelExpansion {
        &self.expansion
    }

    fn exponent(&self) -> f64 {
        1.0
    }
}
