//! Radial law of the SDO frequency weight and its tabulated inverse CDF.

use std::f64::consts::TAU;

use super::SdoParams;
use crate::error::{Error, Result};

/// Grid size used for frequency sampling.
pub const DEFAULT_GRID_SIZE: usize = 10_000;

const MIN_GRID_SIZE: usize = 16;
const TAIL_THRESHOLD: f64 = 1e-4;
const MAX_DOUBLINGS: usize = 60;
const PROBE_INTERVALS: usize = 2048;

/// Unnormalized radial density `r^{d−1} / (1 + a (2π)^{2m} r^{2m})`.
pub fn radial_density(r: f64, params: &SdoParams) -> f64 {
    let m2 = 2 * params.m() as i32;
    let c = TAU.powi(m2);
    r.powi(params.d() as i32 - 1) / (1.0 + params.a() * c * r.powi(m2))
}

/// Surface area of the unit sphere `S^{d−1}` in ℝ^d.
pub fn sphere_area(d: usize) -> f64 {
    // A_1 = 2, A_2 = 2π, A_{k+2} = 2π A_k / k
    let (mut area, mut k) = if d % 2 == 1 { (2.0, 1) } else { (TAU, 2) };
    while k < d {
        area *= TAU / k as f64;
        k += 2;
    }
    area
}

/// Tabulated radial density with its normalized cumulative distribution.
#[derive(Clone, Debug)]
pub struct RadialGrid {
    r_values: Vec<f64>,
    density_values: Vec<f64>,
    cdf: Vec<f64>,
    mass: f64,
}

impl RadialGrid {
    pub fn r_values(&self) -> &[f64] {
        &self.r_values
    }

    pub fn density_values(&self) -> &[f64] {
        &self.density_values
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn r_max(&self) -> f64 {
        *self.r_values.last().expect("grid is nonempty")
    }

    /// Trapezoid mass of `ζ` on `[0, r_max]`.
    pub fn radial_mass(&self) -> f64 {
        self.mass
    }

    /// Total mass `W = ∫_{ℝ^d} w^a(z) dz` implied by the grid.
    pub fn total_mass(&self, d: usize) -> f64 {
        sphere_area(d) * self.mass
    }

    /// Inverse CDF with linear interpolation between grid points.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = self.cdf.partition_point(|&c| c < u);
        if i == 0 {
            return self.r_values[0];
        }
        if i >= self.cdf.len() {
            return self.r_max();
        }
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (r0, r1) = (self.r_values[i - 1], self.r_values[i]);
        if c1 <= c0 {
            return r1;
        }
        r0 + (u - c0) / (c1 - c0) * (r1 - r0)
    }

    /// CDF at `r`, linear between grid points.
    pub fn cdf_at(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let i = self.r_values.partition_point(|&x| x < r);
        if i >= self.r_values.len() {
            return 1.0;
        }
        if i == 0 {
            return self.cdf[0];
        }
        let (r0, r1) = (self.r_values[i - 1], self.r_values[i]);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        c0 + (r - r0) / (r1 - r0) * (c1 - c0)
    }
}

fn trapezoid_uniform(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let inner: f64 = (1..n).map(|i| f(lo + i as f64 * h)).sum();
    h * (0.5 * (f(lo) + f(hi)) + inner)
}

/// Points `r = s·sinh(t)` with `t` uniform: dense near the mode, geometric in
/// the heavy tail.
fn asinh_points(scale: f64, r_max: f64, n: usize) -> Vec<f64> {
    let t_max = (r_max / scale).asinh();
    (0..n)
        .map(|i| {
            if i + 1 == n {
                r_max
            } else {
                scale * (t_max * i as f64 / (n - 1) as f64).sinh()
            }
        })
        .collect()
}

fn trapezoid_points(r: &[f64], f: &[f64]) -> f64 {
    r.windows(2)
        .zip(f.windows(2))
        .map(|(rw, fw)| 0.5 * (fw[0] + fw[1]) * (rw[1] - rw[0]))
        .sum()
}

/// Tabulates `ζ` on `[0, r_max]`.
///
/// `r_max` starts at the natural scale `a^{-1/(2m)}/(2π)` and doubles until
/// the tail mass beyond it, extrapolated geometrically from the trapezoid
/// masses on `[R, 2R]` and `[2R, 4R]`, falls below `1e-4` of the total.
pub fn build_radial_grid(params: &SdoParams, n_grid: usize) -> Result<RadialGrid> {
    if n_grid < MIN_GRID_SIZE {
        return Err(Error::InvalidParameter(format!(
            "radial grid needs at least {MIN_GRID_SIZE} points, got {n_grid}"
        )));
    }
    let scale = params.frequency_scale() / TAU;
    let zeta = |r: f64| radial_density(r, params);

    let mut r_max = scale;
    let mut accepted = false;
    for _ in 0..MAX_DOUBLINGS {
        let pts = asinh_points(scale, r_max, 4 * PROBE_INTERVALS);
        let vals: Vec<f64> = pts.iter().map(|&r| zeta(r)).collect();
        let body = trapezoid_points(&pts, &vals);
        let m1 = trapezoid_uniform(zeta, r_max, 2.0 * r_max, PROBE_INTERVALS);
        let m2 = trapezoid_uniform(zeta, 2.0 * r_max, 4.0 * r_max, PROBE_INTERVALS);
        if m2 < m1 {
            let tail = m1 * m1 / (m1 - m2);
            if tail < TAIL_THRESHOLD * (body + tail) {
                accepted = true;
                break;
            }
        }
        r_max *= 2.0;
    }
    if !accepted {
        return Err(Error::RadialGridTail {
            doublings: MAX_DOUBLINGS,
            r_max,
        });
    }

    let r_values = asinh_points(scale, r_max, n_grid);
    let density_values: Vec<f64> = r_values.iter().map(|&r| zeta(r)).collect();
    let mut cdf = Vec::with_capacity(n_grid);
    let mut acc = 0.0;
    cdf.push(0.0);
    for i in 1..n_grid {
        acc += 0.5 * (density_values[i] + density_values[i - 1]) * (r_values[i] - r_values[i - 1]);
        cdf.push(acc);
    }
    let mass = acc;
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "radial density has non-positive mass {mass}"
        )));
    }
    for c in &mut cdf {
        *c /= mass;
    }
    *cdf.last_mut().expect("nonempty") = 1.0;
    Ok(RadialGrid {
        r_values,
        density_values,
        cdf,
        mass,
    })
}
