//! Random-feature frequencies, the cosine feature map and sampled Gram matrices.

use std::f64::consts::{FRAC_PI_2, TAU};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::radial::{build_radial_grid, DEFAULT_GRID_SIZE};
use super::SdoParams;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// How radii and phases are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    /// Independent radii, directions and phases for every feature.
    #[default]
    Iid,
    /// Radii from stratified CDF levels, features in pairs sharing one
    /// frequency with phases `b` and `b + π/2`. Requires an even count.
    Stratified,
}

/// Overall scale of the sampled kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `(1/T) Σ cos·cos`, exactly as sampled.
    #[default]
    AsSampled,
    /// Multiplied by `2W`, which makes the estimator unbiased for `k^a`.
    Exact,
}

/// Everything needed to regenerate a [`FrequencySample`] bit-identically.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencySpec {
    pub params: SdoParams,
    pub n_features: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: SamplingScheme,
    #[serde(default)]
    pub normalization: Normalization,
}

impl FrequencySpec {
    pub fn new(params: SdoParams, n_features: usize, seed: u64) -> Self {
        Self {
            params,
            n_features,
            seed,
            scheme: SamplingScheme::Iid,
            normalization: Normalization::AsSampled,
        }
    }

    pub fn generate(&self) -> Result<FrequencySample> {
        let fs = sample_frequencies_with(&self.params, self.n_features, self.seed, self.scheme)?;
        Ok(fs.with_normalization(self.normalization))
    }
}

/// Sampled angular frequencies `2π z_t` (one row each) and phases `b_t`.
#[derive(Clone, Debug)]
pub struct FrequencySample {
    spec: FrequencySpec,
    z: Array2<f64>,
    b: Array1<f64>,
    /// Total mass of `w^1` over ℝ^d.
    base_mass: f64,
}

/// Flat record used for reproducibility audits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRecord {
    pub seed: u64,
    #[serde(rename = "T")]
    pub t: usize,
    pub m: u32,
    pub d: usize,
    pub a_base: f64,
    pub scheme: SamplingScheme,
    pub normalization: Normalization,
    pub base_mass: f64,
    /// Angular frequencies, row-major `T × d`.
    pub z: Vec<f64>,
    pub b: Vec<f64>,
}

impl FrequencySample {
    pub fn spec(&self) -> &FrequencySpec {
        &self.spec
    }

    pub fn params(&self) -> &SdoParams {
        &self.spec.params
    }

    pub fn seed(&self) -> u64 {
        self.spec.seed
    }

    pub fn n_features(&self) -> usize {
        self.b.len()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    /// Angular frequencies `2π z_t`, `T × d`.
    pub fn frequencies(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn phases(&self) -> &Array1<f64> {
        &self.b
    }

    pub fn normalization(&self) -> Normalization {
        self.spec.normalization
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.spec.normalization = normalization;
        self
    }

    /// Total mass `W_a = a^{-d/(2m)} W_1` of the frequency weight.
    pub fn total_mass(&self) -> f64 {
        let p = self.params();
        self.base_mass * p.a().powf(-(p.d() as f64) / (2.0 * p.m() as f64))
    }

    /// Multiplier applied to the `(1/T) Σ cos·cos` estimator.
    pub fn kernel_scale(&self) -> f64 {
        match self.spec.normalization {
            Normalization::AsSampled => 1.0,
            Normalization::Exact => 2.0 * self.total_mass(),
        }
    }

    /// Per-feature amplitude `sqrt(scale / T)`.
    pub fn feature_amplitude(&self) -> f64 {
        (self.kernel_scale() / self.n_features() as f64).sqrt()
    }

    /// Same frequencies rescaled to smoothness `a`.
    ///
    /// Bit-identical to sampling at `a` directly with the same seed when this
    /// sample was drawn at `a = 1`; otherwise equal up to one rounding.
    pub fn rescaled(&self, a: f64) -> Result<Self> {
        let params = self.params().with_a(a)?;
        let ratio = params.frequency_scale() / self.params().frequency_scale();
        let current = self.params().frequency_scale();
        let z = if current == 1.0 {
            self.z.mapv(|v| v * params.frequency_scale())
        } else {
            self.z.mapv(|v| v * ratio)
        };
        Ok(Self {
            spec: FrequencySpec { params, ..self.spec },
            z,
            b: self.b.clone(),
            base_mass: self.base_mass,
        })
    }

    pub fn to_record(&self) -> FrequencyRecord {
        FrequencyRecord {
            seed: self.spec.seed,
            t: self.n_features(),
            m: self.params().m(),
            d: self.dim(),
            a_base: self.params().a(),
            scheme: self.spec.scheme,
            normalization: self.spec.normalization,
            base_mass: self.base_mass,
            z: self.z.iter().copied().collect(),
            b: self.b.to_vec(),
        }
    }

    pub fn from_record(record: &FrequencyRecord) -> Result<Self> {
        let params = SdoParams::new(record.a_base, record.m, record.d)?;
        if record.z.len() != record.t * record.d || record.b.len() != record.t {
            return Err(Error::DimensionMismatch {
                expected: record.t * record.d,
                got: record.z.len(),
            });
        }
        let z = Array2::from_shape_vec((record.t, record.d), record.z.clone())
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(Self {
            spec: FrequencySpec {
                params,
                n_features: record.t,
                seed: record.seed,
                scheme: record.scheme,
                normalization: record.normalization,
            },
            z,
            b: Array1::from(record.b.clone()),
            base_mass: record.base_mass,
        })
    }

    /// Projections `⟨z_t, x⟩ + b_t` for every row of `x`.
    pub(crate) fn phases_for(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let mut proj = x.dot(&self.z.t());
        proj.axis_iter_mut(Axis(0))
            .into_par_iter()
            .for_each(|mut row| row += &self.b);
        Ok(proj)
    }
}

fn unit_direction<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return g.into_iter().map(|v| v / norm).collect();
        }
    }
}

fn uniform_phase<R: Rng>(rng: &mut R) -> f64 {
    let b = rng.random::<f64>() * TAU;
    if b >= TAU {
        b - TAU
    } else {
        b
    }
}

/// Draws `t` frequencies for `params` with the i.i.d. scheme.
pub fn sample_frequencies(params: &SdoParams, t: usize, seed: u64) -> Result<FrequencySample> {
    sample_frequencies_with(params, t, seed, SamplingScheme::Iid)
}

/// Draws `t` frequencies for `params`.
///
/// Radii come from the inverse CDF of the `a = 1` radial grid, are rescaled
/// by `a^{-1/(2m)}`, and are stored as angular frequencies `2π r θ`. Each
/// feature (or feature pair) owns a generator derived from `(seed, index)`.
pub fn sample_frequencies_with(
    params: &SdoParams,
    t: usize,
    seed: u64,
    scheme: SamplingScheme,
) -> Result<FrequencySample> {
    if t == 0 {
        return Err(Error::InvalidParameter("number of features must be positive".into()));
    }
    if scheme == SamplingScheme::Stratified && !t.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "stratified sampling needs an even feature count, got {t}"
        )));
    }
    let d = params.d();
    let unit = params.with_a(1.0)?;
    let grid = build_radial_grid(&unit, DEFAULT_GRID_SIZE)?;
    let scale = params.frequency_scale();

    let draws: Vec<(Vec<f64>, f64)> = match scheme {
        SamplingScheme::Iid => (0..t)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_for(seed, &[stream::FREQUENCY, i as u64]);
                let r = grid.inverse_cdf(rng.random::<f64>());
                let theta = unit_direction(&mut rng, d);
                let b = uniform_phase(&mut rng);
                (theta.into_iter().map(|c| TAU * r * c).collect(), b)
            })
            .collect(),
        SamplingScheme::Stratified => {
            let half = t / 2;
            let pairs: Vec<(Vec<f64>, f64)> = (0..half)
                .into_par_iter()
                .map(|p| {
                    let mut rng = rng_for(seed, &[stream::STRATIFIED, p as u64]);
                    let u = (p as f64 + rng.random::<f64>()) / half as f64;
                    let r = grid.inverse_cdf(u);
                    let theta = unit_direction(&mut rng, d);
                    let b = uniform_phase(&mut rng);
                    (theta.into_iter().map(|c| TAU * r * c).collect(), b)
                })
                .collect();
            let shifted = pairs.iter().map(|(z, b)| {
                let mut s = b + FRAC_PI_2;
                if s >= TAU {
                    s -= TAU;
                }
                (z.clone(), s)
            });
            let mut all = pairs.clone();
            all.extend(shifted);
            all
        }
    };

    let mut z = Array2::zeros((t, d));
    let mut b = Array1::zeros(t);
    for (i, (row, phase)) in draws.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            z[[i, j]] = v * scale;
        }
        b[i] = phase;
    }
    Ok(FrequencySample {
        spec: FrequencySpec {
            params: *params,
            n_features: t,
            seed,
            scheme,
            normalization: Normalization::AsSampled,
        },
        z,
        b,
        base_mass: grid.total_mass(d),
    })
}

/// Cosine features `Φ[i][t] = A cos(⟨z_t, x_i⟩ + b_t)` with `A = sqrt(scale/T)`.
///
/// `Φ Φᵀ` reproduces the sampled kernel `(scale/T) Σ_t cos·cos`.
pub fn feature_map(x: ArrayView2<f64>, fs: &FrequencySample) -> Result<Array2<f64>> {
    let mut phi = fs.phases_for(x)?;
    let amp = fs.feature_amplitude();
    Zip::from(&mut phi).par_for_each(|v| *v = amp * v.cos());
    Ok(phi)
}

/// Sampled kernel matrix `Φ(x) Φ(y)ᵀ`.
pub fn kernel_matrix(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    fs: &FrequencySample,
) -> Result<Array2<f64>> {
    let px = feature_map(x, fs)?;
    let py = feature_map(y, fs)?;
    Ok(px.dot(&py.t()))
}
