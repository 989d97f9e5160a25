//! Sampled Single-Derivative-Order (SDO) kernel.
//!
//! The SDO kernel of smoothness `a` and derivative order `m` on ℝ^d has the
//! Fourier representation
//!
//! ```text
//! k^a(x, y) = ∫ exp(2πi⟨y − x, z⟩) / (1 + a (2π)^{2m} ‖z‖^{2m}) dz
//! ```
//!
//! which converges only for `2m > d`. The integrand weight `w^a(z)` is
//! spherically symmetric, so frequencies are drawn as `z = r θ` with `θ`
//! uniform on the sphere and `r` from the one-dimensional radial law
//! `ζ(r) = r^{d−1} w^a(r)`. The kernel is then approximated by random
//! cosine features.
//!
//! Frequencies are always drawn from the `a = 1` radial law and rescaled by
//! `a^{-1/(2m)}`, which is exact in distribution and lets one seed serve a
//! whole sweep over `a`.

mod frequencies;
mod quadrature;
mod radial;

pub use frequencies::{
    feature_map, kernel_matrix, sample_frequencies, sample_frequencies_with, FrequencyRecord,
    FrequencySample, FrequencySpec, Normalization, SamplingScheme,
};
pub use quadrature::{
    adaptive_gauss_kronrod, laplace_kernel_1d, numeric_kernel_1d, QuadratureResult,
};
pub use radial::{build_radial_grid, radial_density, sphere_area, RadialGrid, DEFAULT_GRID_SIZE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothness `a`, derivative order `m` and dimension `d` of an SDO kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdoParams {
    a: f64,
    m: u32,
    d: usize,
}

impl SdoParams {
    pub fn new(a: f64, m: u32, d: usize) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidParameter(format!("a must be positive, got {a}")));
        }
        if d == 0 {
            return Err(Error::InvalidParameter("dimension d must be positive".into()));
        }
        if m == 0 || 2 * m as usize <= d {
            return Err(Error::InvalidParameter(format!(
                "derivative order must satisfy 2m > d (m = {m}, d = {d})"
            )));
        }
        Ok(Self { a, m, d })
    }

    /// Uses the smallest admissible order `m = ⌊d/2⌋ + 1`.
    pub fn with_default_order(a: f64, d: usize) -> Result<Self> {
        Self::new(a, Self::default_order(d), d)
    }

    pub fn default_order(d: usize) -> u32 {
        (d / 2 + 1) as u32
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Same order and dimension, different smoothness.
    pub fn with_a(&self, a: f64) -> Result<Self> {
        Self::new(a, self.m, self.d)
    }

    /// Factor `a^{-1/(2m)}` mapping `a = 1` frequencies onto `w^a`.
    pub fn frequency_scale(&self) -> f64 {
        self.a.powf(-1.0 / (2.0 * self.m as f64))
    }
}
